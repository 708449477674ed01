//! Whole runs: worker threads per tree, the shared pool and register, and the
//! artifacts written to the run directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::config::{ConfigError, Mode, RunConfig};
use crate::drivers::llm::{LlmOptions, ModuleTesting};
use crate::drivers::ratelimit::TokenBucket;
use crate::drivers::{ChatClient, GenError, Generator, LlmGenerator, PromptLibrary, TemplateError};
use crate::export::{to_dot, write_tree};
use crate::harness::{Executor, ProcessExecutor};
use crate::lessons::LessonPool;
use crate::repo::{materialize, RepoError};
use crate::report::RunReport;
use crate::reward::MetricSpec;
use crate::search::{
    run_tree, BestEntry, Budget, GlobalBest, SearchError, Shared, SimBudget, WallBudget,
};
use crate::sim::simulator;
use crate::trajectory::{read_log, Event, EventKind, LogError, Trajectory};
use crate::tree::TreeState;

pub const LOG_FILE: &str = "trajectory.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SERIES_FILE: &str = "best_series.csv";
pub const GRAPH_FILE: &str = "trees.dot";
pub const LESSON_DIR: &str = "lessons";
pub const BEST_DIR: &str = "best";
pub const NODE_DIR: &str = "nodes";
pub const EXCHANGE_FILE: &str = "exchanges.jsonl";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("metric parsing failed: {0}")]
    Metric(GenError),
    #[error(transparent)]
    Prompts(#[from] TemplateError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("writing best solution: {0}")]
    Best(#[from] RepoError),
    #[error("tree worker panicked")]
    WorkerPanicked,
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Everything a finished run produced, in memory.
#[derive(Debug)]
pub struct RunResult {
    pub trees: Vec<TreeState>,
    pub events: Vec<Event>,
    pub best: Option<BestEntry>,
    pub metric: MetricSpec,
    pub report: RunReport,
}

type Worker = (Box<dyn Generator>, Box<dyn Executor>, Box<dyn Budget>);

/// Runs the search described by `cfg` into the given log and lesson pool.
/// `run_dir` is only needed by llm mode (execution workdirs, recorded exchanges).
pub fn execute(
    cfg: &RunConfig,
    log: &Trajectory,
    lessons: &LessonPool,
    run_dir: Option<&Path>,
) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let (mut workers, metric) = match cfg.mode {
        Mode::Sim => sim_workers(cfg),
        Mode::Llm => llm_workers(cfg, run_dir, log)?,
    };
    let s = &cfg.search;
    log.emit(
        0.0,
        0,
        None,
        EventKind::RunStarted {
            mode: cfg.mode.to_string(),
            num_trees: s.num_trees,
            time_budget: s.time_budget,
            exec_limit: s.limit(),
            seed: s.seed,
            w: cfg.reward.w,
            metric: metric.clone(),
        },
    );
    let best = GlobalBest::new();
    let shared = Shared {
        cfg: s,
        reward: cfg.reward,
        metric: &metric,
        task: &cfg.task,
        lessons,
        log,
        best: &best,
    };

    let results: Vec<Result<TreeState, RunError>> = if workers.len() == 1 {
        let (mut g, mut e, mut b) = workers.pop().expect("one worker");
        vec![run_tree(shared, 0, g.as_mut(), e.as_mut(), b.as_mut()).map_err(RunError::from)]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = workers
                .into_iter()
                .enumerate()
                .map(|(k, (mut g, mut e, mut b))| {
                    scope.spawn(move || {
                        run_tree(shared, k as u32, g.as_mut(), e.as_mut(), b.as_mut())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| match h.join() {
                    Ok(r) => r.map_err(RunError::from),
                    Err(_) => Err(RunError::WorkerPanicked),
                })
                .collect()
        })
    };
    let trees = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    log.emit(
        trees.iter().map(|t| t.elapsed).fold(0.0, f64::max),
        0,
        None,
        EventKind::RunFinished { trees: s.num_trees },
    );
    log.flush().map_err(io_err("flushing trajectory log"))?;
    let events = log.events();
    let report = RunReport::from_events(&events);
    Ok(RunResult {
        trees,
        events,
        best: best.get(),
        metric,
        report,
    })
}

fn sim_workers(cfg: &RunConfig) -> (Vec<Worker>, MetricSpec) {
    let metric = cfg.metric.clone().unwrap_or_default();
    let workers = (0..cfg.search.num_trees)
        .map(|k| {
            let (g, e) = simulator(cfg.landscape(), cfg.search.seed, k, metric.clone());
            (
                Box::new(g) as Box<dyn Generator>,
                Box::new(e) as Box<dyn Executor>,
                Box::new(SimBudget::new()) as Box<dyn Budget>,
            )
        })
        .collect();
    (workers, metric)
}

fn llm_workers(
    cfg: &RunConfig,
    run_dir: Option<&Path>,
    log: &Trajectory,
) -> Result<(Vec<Worker>, MetricSpec), RunError> {
    let run_dir = run_dir.unwrap_or(Path::new("."));
    let endpoint = cfg.endpoint.clone().unwrap_or_default();
    let prompts = Arc::new(match &cfg.paths.prompts {
        Some(dir) => PromptLibrary::with_overrides(dir)?,
        None => PromptLibrary::builtin(),
    });
    let bucket = Arc::new(TokenBucket::new(
        cfg.search.num_trees.max(1),
        endpoint.rate_limit_per_sec,
    ));
    let node_dir = run_dir.join(NODE_DIR);
    fs::create_dir_all(&node_dir).map_err(io_err(format!("creating {}", node_dir.display())))?;

    let mut workers: Vec<Worker> = Vec::new();
    for k in 0..cfg.search.num_trees {
        let mut client = ChatClient::new(endpoint.clone());
        if cfg.search.num_trees > 1 {
            client = client.with_rate_limit(Arc::clone(&bucket));
        }
        let exchanges = run_dir.join(EXCHANGE_FILE);
        client = client
            .record_to(&exchanges)
            .map_err(io_err(format!("opening {}", exchanges.display())))?;
        let options = LlmOptions {
            model_dedup: cfg.llm.model_dedup,
            module_testing: cfg.llm.module_tests.then(|| ModuleTesting {
                harness: cfg.harness.clone(),
                scratch_dir: run_dir.join("module-tests").join(format!("t{k}")),
                limit: cfg.llm.module_test_limit.unwrap_or(cfg.search.limit()),
                max_debug: cfg.llm.module_max_debug,
            }),
        };
        workers.push((
            Box::new(LlmGenerator::new(client, Arc::clone(&prompts), options)),
            Box::new(ProcessExecutor::new(cfg.harness.clone(), &node_dir)),
            Box::new(WallBudget::start()),
        ));
    }

    let metric = match &cfg.metric {
        Some(m) => m.clone(),
        None => {
            let gen = &mut workers[0].0;
            let parsed = gen.parse_metric_spec(&cfg.task.description);
            for call in gen.take_calls() {
                log.emit(
                    0.0,
                    0,
                    None,
                    EventKind::ModelCall {
                        purpose: call.purpose,
                        attempts: call.attempts,
                        request: call.request,
                        response: call.response,
                    },
                );
            }
            parsed.map_err(RunError::Metric)?
        }
    };
    Ok((workers, metric))
}

/// Run with the config's own output directory, writing every artifact.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let dir = &cfg.paths.output;
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    // a rerun replaces, never merges with, earlier artifacts
    for name in [LESSON_DIR, BEST_DIR, NODE_DIR, "module-tests"] {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(io_err(format!("clearing {}", p.display())))?;
        }
    }
    for name in [LOG_FILE, EXCHANGE_FILE] {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(io_err(format!("clearing {}", p.display())))?;
        }
    }
    for k in 0.. {
        let p = crate::export::tree_file(dir, k);
        if !p.exists() {
            break;
        }
        fs::remove_file(&p).map_err(io_err(format!("clearing {}", p.display())))?;
    }
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(io_err("writing config.toml"))?;

    let log = Trajectory::to_file(&dir.join(LOG_FILE)).map_err(io_err("opening trajectory log"))?;
    let lessons =
        LessonPool::persistent(dir.join(LESSON_DIR)).map_err(io_err("opening lesson store"))?;
    let result = execute(cfg, &log, &lessons, Some(dir))?;

    for t in &result.trees {
        write_tree(dir, t).map_err(io_err("writing tree export"))?;
    }
    fs::write(dir.join(GRAPH_FILE), to_dot(&result.trees)).map_err(io_err("writing tree graph"))?;
    if let Some(best) = &result.best {
        materialize(&best.repo, &dir.join(BEST_DIR))?;
    }
    write_report(dir, &result.report)?;
    Ok(result)
}

pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), RunError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(dir.join(REPORT_FILE), json + "\n").map_err(io_err("writing report"))?;
    fs::write(dir.join(SERIES_FILE), report.series_csv()).map_err(io_err("writing best series"))?;
    Ok(())
}

/// Recomputes the report from a trajectory log.
pub fn cmd_replay(log_path: &Path) -> Result<RunReport, RunError> {
    let events = read_log(log_path)?;
    Ok(RunReport::from_events(&events))
}

/// Accepts either a run directory or a log file.
pub fn log_path(run: &Path) -> PathBuf {
    if run.is_dir() {
        run.join(LOG_FILE)
    } else {
        run.to_path_buf()
    }
}

/// Reads the stored report of a run directory.
pub fn cmd_report(run_dir: &Path) -> Result<RunReport, RunError> {
    let path = run_dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RunError::Io {
        context: format!("parsing {}", path.display()),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })
}

/// In-memory sim run with no artifacts; used by sweeps and tests.
pub fn run_sim(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let cfg = RunConfig {
        mode: Mode::Sim,
        ..cfg.clone()
    };
    execute(&cfg, &Trajectory::in_memory(), &LessonPool::new(), None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_iteration_run_reports_no_solution() {
        let mut cfg = RunConfig::default();
        cfg.search.max_iterations = Some(0);
        let r = run_sim(&cfg).unwrap();
        assert_eq!(r.trees[0].len(), 1);
        assert!(r.best.is_none());
        assert!(r.report.best.is_none());
        assert_eq!(r.report.nodes, 1);
    }

    #[test]
    fn default_sim_run_finds_a_solution() {
        let r = run_sim(&RunConfig::default()).unwrap();
        assert!(r.best.is_some());
        assert!(r.trees[0].elapsed <= 200.0 + 200.0 / 6.0 + 1e-9);
    }
}

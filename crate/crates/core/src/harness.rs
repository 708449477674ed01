//! Running a materialized solution under a time limit and turning its output
//! into an execution outcome.

use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::drivers::ReviewRecord;
use crate::repo::{self, RepoError, SolutionRepo};
use crate::reward::ExecutionCost;
use crate::tree::NodeId;

pub const DEFAULT_OUTPUT_CAP: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    Failure,
    /// Hit the per-node limit L.
    Timeout,
    /// Stopped early because the global budget ran out.
    Killed,
}

impl ExitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitStatus::Success => "success",
            ExitStatus::Failure => "failure",
            ExitStatus::Timeout => "timeout",
            ExitStatus::Killed => "killed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub exit: ExitStatus,
    /// Tail of merged stdout/stderr, cut at a line boundary.
    pub output: String,
    pub cost: ExecutionCost,
    pub metric_line: Option<f64>,
}

impl ExecutionOutcome {
    /// Builds an outcome, clamping `t` into `(0, limit]` and parsing the sentinel.
    pub fn new(exit: ExitStatus, output: String, t: f64, limit: f64) -> Self {
        let t = if exit == ExitStatus::Timeout {
            limit
        } else {
            t
        };
        let metric_line = parse_metric_line(&output);
        Self {
            exit,
            output,
            cost: ExecutionCost::clamped(t, limit),
            metric_line,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to launch {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error("harness i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Other(String),
}

fn metric_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^[ \t]*Final Validation Metric:[ \t]*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)[ \t]*\r?$")
            .expect("static regex")
    })
}

/// Value of the last `Final Validation Metric: <number>` line, if any.
pub fn parse_metric_line(output: &str) -> Option<f64> {
    metric_regex()
        .captures_iter(output)
        .last()
        .and_then(|c| c[1].parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// Keeps at most `cap` trailing bytes, dropping any partial first line.
pub fn tail_truncate(output: &str, cap: usize) -> String {
    if output.len() <= cap {
        return output.to_string();
    }
    let mut start = output.len() - cap;
    while !output.is_char_boundary(start) {
        start += 1;
    }
    let tail = &output[start..];
    let starts_clean = output.as_bytes()[start - 1] == b'\n';
    match (starts_clean, tail.find('\n')) {
        (true, _) => tail.to_string(),
        (false, Some(nl)) => tail[nl + 1..].to_string(),
        (false, None) => String::new(),
    }
}

/// Review used in simulation and whenever no model reviewer is configured:
/// valid exactly when the run succeeded and printed the sentinel.
pub fn deterministic_review(outcome: &ExecutionOutcome) -> ReviewRecord {
    let valid = outcome.exit == ExitStatus::Success && outcome.metric_line.is_some();
    let summary = match (outcome.exit, outcome.metric_line) {
        (ExitStatus::Success, Some(m)) => format!("run succeeded, final validation metric {m}"),
        (ExitStatus::Success, None) => {
            "run succeeded but printed no final validation metric".to_string()
        }
        (exit, _) => format!("run ended with status {}", exit.as_str()),
    };
    ReviewRecord {
        summary,
        metric: if valid { outcome.metric_line } else { None },
        valid_metric: valid,
    }
}

/// What the engine asks an executor to run.
#[derive(Debug, Clone, Copy)]
pub struct ExecRequest<'a> {
    pub tree: u32,
    pub node: NodeId,
    pub repo: &'a SolutionRepo,
    /// Per-node limit L.
    pub limit: f64,
    /// Remaining global budget; at most `limit`. Exceeding it yields `Killed`.
    pub kill_after: f64,
}

pub trait Executor: Send {
    fn execute(&mut self, req: ExecRequest<'_>) -> Result<ExecutionOutcome, HarnessError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Program and arguments; `{main}` is replaced by the main file path.
    pub entry_command: Vec<String>,
    pub output_cap: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            entry_command: vec!["python3".into(), "{main}".into()],
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }
}

#[derive(Debug, Serialize)]
struct ExitMeta<'a> {
    status: &'a str,
    code: Option<i32>,
    t: f64,
    limit: f64,
}

/// Runs the entry command in a per-node directory `<run>/t<tree>-n<node>/`.
#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    pub config: HarnessConfig,
    pub run_dir: PathBuf,
}

impl ProcessExecutor {
    pub fn new(config: HarnessConfig, run_dir: impl Into<PathBuf>) -> Self {
        Self {
            config,
            run_dir: run_dir.into(),
        }
    }

    pub fn node_dir(&self, tree: u32, node: NodeId) -> PathBuf {
        self.run_dir.join(format!("t{tree}-n{:05}", node.0))
    }
}

impl Executor for ProcessExecutor {
    fn execute(&mut self, req: ExecRequest<'_>) -> Result<ExecutionOutcome, HarnessError> {
        let dir = self.node_dir(req.tree, req.node);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        repo::materialize(req.repo, &dir)?;
        let run = run_command(
            &self.config,
            &dir,
            req.repo.main(),
            req.limit,
            req.kill_after.min(req.limit),
        )?;
        fs::write(
            dir.join("exit.meta"),
            serde_json::to_string_pretty(&ExitMeta {
                status: run.outcome.exit.as_str(),
                code: run.code,
                t: run.outcome.cost.t,
                limit: run.outcome.cost.limit,
            })
            .map_err(io::Error::other)?,
        )?;
        Ok(run.outcome)
    }
}

pub(crate) struct CommandRun {
    pub outcome: ExecutionOutcome,
    pub code: Option<i32>,
}

/// Launches the entry command for `main` in `dir`, merging both streams into
/// `dir/stdout.log`.
pub(crate) fn run_command(
    cfg: &HarnessConfig,
    dir: &Path,
    main: &str,
    limit: f64,
    kill_after: f64,
) -> Result<CommandRun, HarnessError> {
    let (program, args) = cfg
        .entry_command
        .split_first()
        .ok_or_else(|| HarnessError::Other("harness.entry_command is empty".into()))?;
    let args: Vec<String> = args.iter().map(|a| a.replace("{main}", main)).collect();
    let log_path = dir.join("stdout.log");
    let log = File::create(&log_path)?;
    let started = Instant::now();
    let mut child = Command::new(program)
        .args(&args)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .spawn()
        .map_err(|source| HarnessError::Spawn {
            command: program.clone(),
            source,
        })?;
    let wait = Duration::from_secs_f64(kill_after.max(0.0));
    let (exit, code) = match child.wait_timeout(wait)? {
        Some(status) if status.success() => (ExitStatus::Success, status.code()),
        Some(status) => (ExitStatus::Failure, status.code()),
        None => {
            child.kill().ok();
            child.wait()?;
            let exit = if kill_after < limit {
                ExitStatus::Killed
            } else {
                ExitStatus::Timeout
            };
            (exit, None)
        }
    };
    let t = started.elapsed().as_secs_f64();
    let output = read_tail(&log_path, cfg.output_cap)?;
    let t = match exit {
        ExitStatus::Killed => t.min(kill_after),
        _ => t.min(limit),
    };
    Ok(CommandRun {
        outcome: ExecutionOutcome::new(exit, output, t, limit),
        code,
    })
}

fn read_tail(path: &Path, cap: usize) -> io::Result<String> {
    let mut f = File::open(path)?;
    let len = f.metadata()?.len();
    // read one extra byte so the line-alignment check sees the preceding char
    let from = len.saturating_sub(cap as u64 + 1);
    f.seek(SeekFrom::Start(from))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(tail_truncate(&String::from_utf8_lossy(&buf), cap))
}

//! Command-line front end: run a search, replay a log, export trees, show reports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use budget_mcts::config::{ConfigError, Mode, RunConfig};
use budget_mcts::export::{load_trees, to_dot};
use budget_mcts::run::{cmd_replay, cmd_report, cmd_run, log_path, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "budget-mcts",
    version,
    about = "Budget-aware tree search over candidate solutions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `search.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `mode`.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Recompute the report from a trajectory log (or a run directory).
    Replay { log: PathBuf },
    /// Print the search trees of a run.
    ExportTree {
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Graph)]
        format: Format,
    },
    /// Show the stored report of a run.
    Report {
        run: PathBuf,
        /// Print the best-metric series as CSV instead of the summary.
        #[arg(long)]
        series: bool,
        /// Print the full report as JSON.
        #[arg(long, conflicts_with = "series")]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// JSON documents of every tree.
    Doc,
    /// Graphviz DOT.
    Graph,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn run(config: &Path, seed: Option<u64>, mode: Option<Mode>) -> Result<(), Failure> {
    let mut cfg = RunConfig::read(config)?;
    if let Some(s) = seed {
        cfg.search.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    log::info!(
        "running {} mode into {}",
        cfg.mode,
        cfg.paths.output.display()
    );
    let result = cmd_run(&cfg)?;
    emit(&format!(
        "{}artifacts: {}\n",
        result.report.summary(),
        cfg.paths.output.display()
    ));
    Ok(())
}

// a closed pipe (`| head`) ends output quietly instead of panicking
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, seed, mode } => run(&config, seed, mode),
        Command::Replay { log } => {
            let report = cmd_replay(&log_path(&log))?;
            emit(&format!("{}\n", to_json(&report)));
            Ok(())
        }
        Command::ExportTree { run, format } => {
            let trees = load_trees(&run).map_err(|e| {
                Failure::Runtime(format!("reading trees of {}: {e}", run.display()))
            })?;
            if trees.is_empty() {
                return Err(Failure::Runtime(format!(
                    "no tree exports in {}",
                    run.display()
                )));
            }
            match format {
                Format::Doc => emit(&format!("{}\n", to_json(&trees))),
                Format::Graph => emit(&to_dot(&trees)),
            }
            Ok(())
        }
        Command::Report { run, series, json } => {
            let report = cmd_report(&run)?;
            if series {
                emit(&report.series_csv());
            } else if json {
                emit(&format!("{}\n", to_json(&report)));
            } else {
                emit(&report.summary());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

//! Append-only event log. One JSON object per line:
//! `{"seq":..,"time":..,"tree":..,"node":..,"kind":..,"data":{..}}`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::ExitStatus;
use crate::lessons::{LessonCategory, LessonId};
use crate::reward::MetricSpec;
use crate::tree::{Action, NodeId, NodeStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Budget consumed by the emitting tree when the event was recorded.
    pub time: f64,
    pub tree: u32,
    pub node: Option<NodeId>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum EventKind {
    RunStarted {
        mode: String,
        num_trees: u32,
        time_budget: f64,
        exec_limit: f64,
        seed: u64,
        w: f64,
        metric: MetricSpec,
    },
    NodeCreated {
        parent: Option<NodeId>,
        action: Option<Action>,
        branch: NodeId,
        debug_depth: u32,
    },
    GeneratorFailed {
        action: Action,
        error: String,
    },
    Executed {
        exit: ExitStatus,
        t: f64,
        limit: f64,
        metric_line: Option<f64>,
    },
    Reviewed {
        status: NodeStatus,
        metric: Option<f64>,
        summary: String,
    },
    LessonAdded {
        lesson: LessonId,
        category: LessonCategory,
        title: String,
        origin_tree: u32,
        origin_node: NodeId,
        origin_branch: NodeId,
    },
    LessonRejected {
        category: LessonCategory,
        reason: String,
    },
    LessonCited {
        lessons: BTreeSet<LessonId>,
    },
    CitationMiss {
        lessons: BTreeSet<LessonId>,
    },
    Backprop {
        reward: f64,
        path: Vec<NodeId>,
    },
    BestUpdated {
        metric: f64,
        oriented: f64,
        /// Whether this node also became the best across all trees.
        global: bool,
        loc: usize,
        files: usize,
    },
    ModelCall {
        purpose: String,
        attempts: u32,
        request: serde_json::Value,
        response: String,
    },
    BudgetExhausted {
        elapsed: f64,
        killed: Option<NodeId>,
    },
    TreeFinished {
        nodes: usize,
        best: Option<NodeId>,
        elapsed: f64,
    },
    RunFinished {
        trees: u32,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::RunStarted { .. } => "run_started",
            EventKind::NodeCreated { .. } => "node_created",
            EventKind::GeneratorFailed { .. } => "generator_failed",
            EventKind::Executed { .. } => "executed",
            EventKind::Reviewed { .. } => "reviewed",
            EventKind::LessonAdded { .. } => "lesson_added",
            EventKind::LessonRejected { .. } => "lesson_rejected",
            EventKind::LessonCited { .. } => "lesson_cited",
            EventKind::CitationMiss { .. } => "citation_miss",
            EventKind::Backprop { .. } => "backprop",
            EventKind::BestUpdated { .. } => "best_updated",
            EventKind::ModelCall { .. } => "model_call",
            EventKind::BudgetExhausted { .. } => "budget_exhausted",
            EventKind::TreeFinished { .. } => "tree_finished",
            EventKind::RunFinished { .. } => "run_finished",
        }
    }
}

struct LogInner {
    events: Vec<Event>,
    sink: Option<BufWriter<File>>,
    io_error: Option<io::Error>,
}

/// Multi-producer append-only log. Sequence numbers are assigned under the
/// same lock that orders the writes, so file order equals `seq` order.
pub struct Trajectory {
    inner: Mutex<LogInner>,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("len", &self.len())
            .finish()
    }
}

impl Trajectory {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(LogInner {
                events: Vec::new(),
                sink: None,
                io_error: None,
            }),
        }
    }

    pub fn to_file(path: &Path) -> io::Result<Self> {
        let file = File::create(path)?;
        let t = Self::in_memory();
        t.inner.lock().sink = Some(BufWriter::new(file));
        Ok(t)
    }

    pub fn emit(&self, time: f64, tree: u32, node: Option<NodeId>, kind: EventKind) -> u64 {
        let mut inner = self.inner.lock();
        let seq = inner.events.len() as u64;
        let event = Event {
            seq,
            time,
            tree,
            node,
            kind,
        };
        if inner.io_error.is_none() {
            if let Some(sink) = inner.sink.as_mut() {
                let line = serde_json::to_string(&event).expect("events always serialize");
                if let Err(e) = writeln!(sink, "{line}") {
                    inner.io_error = Some(e);
                }
            }
        }
        inner.events.push(event);
        seq
    }

    pub fn len(&self) -> usize {
        self.inner.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<Event> {
        self.inner.lock().events.clone()
    }

    /// Flushes the file sink and reports the first write error, if any.
    pub fn flush(&self) -> io::Result<()> {
        let mut inner = self.inner.lock();
        if let Some(e) = inner.io_error.take() {
            return Err(e);
        }
        match inner.sink.as_mut() {
            Some(sink) => sink.flush(),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("line {line}: log is truncated ({reason})")]
    Truncated { line: usize, reason: String },
}

/// Parses a log, checking sequence numbers and that the run finished.
pub fn parse_log(text: &str) -> Result<Vec<Event>, LogError> {
    let mut events = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        if raw.trim().is_empty() {
            return Err(LogError::Schema {
                line,
                reason: "empty line".into(),
            });
        }
        let ev: Event = serde_json::from_str(raw).map_err(|e| {
            // a partial last line is a truncation, not a schema violation
            if e.is_eof() && !text.ends_with('\n') && line == text.lines().count() {
                LogError::Truncated {
                    line,
                    reason: "incomplete record".into(),
                }
            } else {
                LogError::Schema {
                    line,
                    reason: e.to_string(),
                }
            }
        })?;
        if ev.seq != events.len() as u64 {
            return Err(LogError::Schema {
                line,
                reason: format!("expected seq {}, found {}", events.len(), ev.seq),
            });
        }
        events.push(ev);
    }
    match events.last().map(|e| &e.kind) {
        Some(EventKind::RunFinished { .. }) => Ok(events),
        Some(_) => Err(LogError::Truncated {
            line: last_line + 1,
            reason: "no run_finished record".into(),
        }),
        None => Err(LogError::Truncated {
            line: 1,
            reason: "log is empty".into(),
        }),
    }
}

pub fn read_log(path: &Path) -> Result<Vec<Event>, LogError> {
    let io_err = |source| LogError::Io {
        path: path.display().to_string(),
        source,
    };
    parse_log(&std::fs::read_to_string(path).map_err(io_err)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let t = Trajectory::in_memory();
        t.emit(
            0.0,
            0,
            Some(NodeId::ROOT),
            EventKind::NodeCreated {
                parent: None,
                action: None,
                branch: NodeId::ROOT,
                debug_depth: 0,
            },
        );
        t.emit(
            1.5,
            0,
            Some(NodeId(1)),
            EventKind::Executed {
                exit: ExitStatus::Success,
                t: 0.1 + 0.2,
                limit: 33.333333333333336,
                metric_line: Some(0.7),
            },
        );
        t.emit(2.0, 0, None, EventKind::RunFinished { trees: 1 });
        t
    }

    fn to_text(events: &[Event]) -> String {
        events
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect()
    }

    #[test]
    fn round_trip_is_exact() {
        let events = sample().events();
        let text = to_text(&events);
        assert!(text.starts_with(
            r#"{"seq":0,"time":0.0,"tree":0,"node":0,"kind":"node_created","data":{"#
        ));
        assert_eq!(parse_log(&text).unwrap(), events);
    }

    #[test]
    fn truncation_is_reported_with_line() {
        let text = to_text(&sample().events());
        let lines: Vec<&str> = text.lines().collect();
        let cut = format!("{}\n{}", lines[0], &lines[1][..20]);
        match parse_log(&cut) {
            Err(LogError::Truncated { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let no_end = format!("{}\n{}\n", lines[0], lines[1]);
        match parse_log(&no_end) {
            Err(LogError::Truncated { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_violation_is_line_numbered() {
        let text = to_text(&sample().events()).replace("\"executed\"", "\"exploded\"");
        match parse_log(&text) {
            Err(LogError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_sink_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.jsonl");
        let t = Trajectory::to_file(&path).unwrap();
        for e in sample().events() {
            t.emit(e.time, e.tree, e.node, e.kind);
        }
        t.flush().unwrap();
        assert_eq!(read_log(&path).unwrap(), t.events());
    }
}

//! Run reports, recomputed from the event log alone so that a replay of the
//! log reproduces the report of the original run exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lessons::{utilization_metrics, LessonCategory, UtilizationMetrics};
use crate::trajectory::{Event, EventKind};
use crate::tree::{NodeId, NodeStatus};

/// Fraction of valid solutions that strictly beat the best seen before them;
/// the first valid solution always counts. Inputs are oriented metrics in
/// creation order.
pub fn effective_solution_rate(oriented: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut improved = 0usize;
    for &v in oriented {
        if v > best {
            best = v;
            improved += 1;
        }
    }
    if oriented.is_empty() {
        0.0
    } else {
        improved as f64 / oriented.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub seq: u64,
    pub time: f64,
    pub tree: u32,
    pub node: NodeId,
    pub metric: f64,
    pub oriented: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub tree: u32,
    pub node: NodeId,
    pub metric: f64,
    pub oriented: f64,
    pub lines_of_code: usize,
    pub file_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LessonCounts {
    pub solution: usize,
    pub debug: usize,
    pub rejected: usize,
    pub citation_misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub trees: u32,
    /// None when no valid solution was found.
    pub best: Option<BestSummary>,
    /// Global best over time; non-decreasing in `oriented`.
    pub best_series: Vec<SeriesPoint>,
    pub effective_solution_rate: f64,
    pub valid_solutions: usize,
    pub improvements: usize,
    pub utilization_rate: f64,
    pub transfer_rate: f64,
    pub nodes: usize,
    pub nodes_by_status: BTreeMap<String, usize>,
    pub nodes_by_action: BTreeMap<String, usize>,
    pub lessons: LessonCounts,
    pub model_calls: usize,
    pub killed_nodes: usize,
    /// Budget consumed per tree.
    pub elapsed: BTreeMap<u32, f64>,
}

impl RunReport {
    pub fn from_events(events: &[Event]) -> Self {
        let mut mode = String::new();
        let mut trees = 0;
        let mut status: BTreeMap<(u32, NodeId), NodeStatus> = BTreeMap::new();
        let mut nodes_by_action: BTreeMap<String, usize> = BTreeMap::new();
        let mut best_series = Vec::new();
        let mut best = None;
        let mut lessons = LessonCounts::default();
        let (mut valid, mut model_calls, mut killed_nodes) = (0, 0, 0);
        let mut elapsed = BTreeMap::new();

        for ev in events {
            match &ev.kind {
                EventKind::RunStarted {
                    mode: m, num_trees, ..
                } => {
                    mode = m.clone();
                    trees = *num_trees;
                }
                EventKind::NodeCreated { action, .. } => {
                    let Some(node) = ev.node else { continue };
                    let s = if action.is_some() {
                        NodeStatus::DraftPending
                    } else {
                        NodeStatus::Root
                    };
                    status.insert((ev.tree, node), s);
                    let key = action.map_or("root", |a| a.as_str());
                    *nodes_by_action.entry(key.to_string()).or_default() += 1;
                }
                EventKind::Reviewed { status: s, .. } => {
                    if let Some(node) = ev.node {
                        status.insert((ev.tree, node), *s);
                    }
                    if *s == NodeStatus::Valid {
                        valid += 1;
                    }
                }
                EventKind::BestUpdated {
                    metric,
                    oriented,
                    global: true,
                    loc,
                    files,
                } => {
                    let node = ev.node.unwrap_or(NodeId::ROOT);
                    best_series.push(SeriesPoint {
                        seq: ev.seq,
                        time: ev.time,
                        tree: ev.tree,
                        node,
                        metric: *metric,
                        oriented: *oriented,
                    });
                    best = Some(BestSummary {
                        tree: ev.tree,
                        node,
                        metric: *metric,
                        oriented: *oriented,
                        lines_of_code: *loc,
                        file_count: *files,
                    });
                }
                EventKind::LessonAdded { category, .. } => match category {
                    LessonCategory::Solution => lessons.solution += 1,
                    LessonCategory::Debug => lessons.debug += 1,
                },
                EventKind::LessonRejected { .. } => lessons.rejected += 1,
                EventKind::CitationMiss { .. } => lessons.citation_misses += 1,
                EventKind::ModelCall { .. } => model_calls += 1,
                EventKind::BudgetExhausted {
                    killed: Some(_), ..
                } => killed_nodes += 1,
                EventKind::TreeFinished { elapsed: e, .. } => {
                    elapsed.insert(ev.tree, *e);
                }
                _ => {}
            }
        }

        let mut nodes_by_status = BTreeMap::new();
        for s in status.values() {
            *nodes_by_status.entry(s.as_str().to_string()).or_default() += 1;
        }
        let UtilizationMetrics {
            utilization_rate,
            transfer_rate,
        } = utilization_metrics(events);
        let improvements = best_series.len();
        RunReport {
            mode,
            trees,
            best,
            effective_solution_rate: if valid == 0 {
                0.0
            } else {
                improvements as f64 / valid as f64
            },
            best_series,
            valid_solutions: valid,
            improvements,
            utilization_rate,
            transfer_rate,
            nodes: status.len(),
            nodes_by_status,
            nodes_by_action,
            lessons,
            model_calls,
            killed_nodes,
            elapsed,
        }
    }

    /// Plot-ready `time,tree,node,metric,oriented` rows.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("seq,time,tree,node,metric,oriented\n");
        for p in &self.best_series {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.seq, p.time, p.tree, p.node, p.metric, p.oriented
            );
        }
        out
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        match &self.best {
            Some(b) => {
                let _ = writeln!(
                    s,
                    "best: tree {} {} metric {} ({} lines, {} files)",
                    b.tree, b.node, b.metric, b.lines_of_code, b.file_count
                );
            }
            None => s.push_str("best: no valid solution found\n"),
        }
        let _ = writeln!(
            s,
            "nodes: {} {:?}\nactions: {:?}",
            self.nodes, self.nodes_by_status, self.nodes_by_action
        );
        let _ = writeln!(
            s,
            "effective solution rate: {:.4} ({} of {} valid)",
            self.effective_solution_rate, self.improvements, self.valid_solutions
        );
        let _ = writeln!(
            s,
            "lessons: {} solution, {} debug, {} rejected; utilization {:.4}, transfer {:.4}",
            self.lessons.solution,
            self.lessons.debug,
            self.lessons.rejected,
            self.utilization_rate,
            self.transfer_rate
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Action;

    #[test]
    fn esr_hand_trace() {
        assert_eq!(effective_solution_rate(&[0.5, 0.4, 0.6, 0.7, 0.65]), 0.6);
        assert_eq!(effective_solution_rate(&[0.1, 0.2, 0.3]), 1.0);
        assert_eq!(effective_solution_rate(&[]), 0.0);
    }

    fn ev(seq: u64, node: u32, kind: EventKind) -> Event {
        Event {
            seq,
            time: seq as f64,
            tree: 0,
            node: Some(NodeId(node)),
            kind,
        }
    }

    #[test]
    fn counts_from_events() {
        let created = |parent: u32| EventKind::NodeCreated {
            parent: Some(NodeId(parent)),
            action: Some(Action::Draft),
            branch: NodeId(1),
            debug_depth: 0,
        };
        let reviewed = |status, metric| EventKind::Reviewed {
            status,
            metric,
            summary: String::new(),
        };
        let events = vec![
            ev(
                0,
                0,
                EventKind::NodeCreated {
                    parent: None,
                    action: None,
                    branch: NodeId(0),
                    debug_depth: 0,
                },
            ),
            ev(1, 1, created(0)),
            ev(2, 1, reviewed(NodeStatus::Valid, Some(0.5))),
            ev(
                3,
                1,
                EventKind::BestUpdated {
                    metric: 0.5,
                    oriented: 0.5,
                    global: true,
                    loc: 10,
                    files: 2,
                },
            ),
            ev(4, 2, created(0)),
            ev(5, 2, reviewed(NodeStatus::Buggy, None)),
            ev(6, 3, created(0)),
        ];
        let r = RunReport::from_events(&events);
        assert_eq!(r.nodes, 4);
        assert_eq!(r.nodes_by_status["valid"], 1);
        assert_eq!(r.nodes_by_status["buggy"], 1);
        assert_eq!(r.nodes_by_status["draft_pending"], 1);
        assert_eq!(r.nodes_by_action["draft"], 3);
        assert_eq!(r.effective_solution_rate, 1.0);
        assert_eq!(r.best.as_ref().unwrap().lines_of_code, 10);
        assert!(r.series_csv().ends_with("3,3,0,n00001,0.5,0.5\n"));
    }
}

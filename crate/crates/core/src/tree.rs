//! Search tree data: nodes, configuration and per-tree state.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::harness::ExitStatus;
use crate::lessons::LessonId;
use crate::repo::SolutionRepo;
use crate::reward::ExecutionCost;

/// Index of a node inside its tree. Ids are allocated in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{:05}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Root,
    DraftPending,
    Valid,
    Buggy,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Root => "root",
            NodeStatus::DraftPending => "draft_pending",
            NodeStatus::Valid => "valid",
            NodeStatus::Buggy => "buggy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Draft,
    Improve,
    Debug,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Draft => "draft",
            Action::Improve => "improve",
            Action::Debug => "debug",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub status: NodeStatus,
    pub action: Option<Action>,
    pub solution: Option<SolutionRepo>,
    /// Raw metric as reported by the review.
    pub metric: Option<f64>,
    pub cost: Option<ExecutionCost>,
    pub exit: Option<ExitStatus>,
    /// Visit count.
    pub visits: u64,
    /// Running mean of propagated rewards.
    pub value: f64,
    /// Draft ancestor; drafts point at themselves, the root at itself.
    pub branch: NodeId,
    pub cited_lessons: BTreeSet<LessonId>,
    pub debug_depth: u32,
    pub idea: Option<String>,
    pub review_summary: Option<String>,
    /// Tail of the captured execution output.
    pub output: Option<String>,
    /// Generator or review error, when the node failed before producing a metric.
    pub error: Option<String>,
    pub created_at: f64,
}

impl SearchNode {
    pub(crate) fn root() -> Self {
        Self {
            id: NodeId::ROOT,
            parent: None,
            children: Vec::new(),
            status: NodeStatus::Root,
            action: None,
            solution: None,
            metric: None,
            cost: None,
            exit: None,
            visits: 0,
            value: 0.0,
            branch: NodeId::ROOT,
            cited_lessons: BTreeSet::new(),
            debug_depth: 0,
            idea: None,
            review_summary: None,
            output: None,
            error: None,
            created_at: 0.0,
        }
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// UCT descent with the fully-expanded and root re-activation rules.
    #[default]
    Uct,
    /// Always expand the best valid node; draft only while none exists.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Total budget T, seconds (llm mode) or simulated units (sim mode).
    pub time_budget: f64,
    /// Per-node execution limit L. Defaults to T / 6.
    pub exec_limit: Option<f64>,
    pub c_uct: f64,
    /// N_i: improvement children after which a valid node is fully expanded.
    pub max_improve_children: u32,
    /// N_d: debug attempts allowed per failure.
    pub max_debug_depth: u32,
    /// n_s: valid nodes without a new best after which the root re-opens.
    pub stagnation_window: u32,
    /// K_m: lessons injected into a prompt.
    pub lesson_window: usize,
    pub seed: u64,
    pub num_trees: u32,
    /// Optional hard cap on search iterations, on top of the time budget.
    pub max_iterations: Option<u64>,
    pub policy: SelectionPolicy,
    /// Character budget for prior idea summaries passed to drafting.
    pub idea_budget_chars: usize,
}

// the pinned default is the five-digit value, not the exact constant
#[allow(clippy::approx_constant)]
impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            time_budget: 200.0,
            exec_limit: None,
            c_uct: 1.41421,
            max_improve_children: 2,
            max_debug_depth: 10,
            stagnation_window: 5,
            lesson_window: 30,
            seed: 0,
            num_trees: 1,
            max_iterations: None,
            policy: SelectionPolicy::Uct,
            idea_budget_chars: 8000,
        }
    }
}

impl SearchConfig {
    pub fn limit(&self) -> f64 {
        self.exec_limit.unwrap_or(self.time_budget / 6.0)
    }

    /// Every violated constraint, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.time_budget.is_finite() && self.time_budget > 0.0) {
            v.push(format!(
                "search.time_budget must be > 0, got {}",
                self.time_budget
            ));
        }
        if let Some(l) = self.exec_limit {
            if !(l.is_finite() && l > 0.0) {
                v.push(format!("search.exec_limit must be > 0, got {l}"));
            }
        }
        if !(self.c_uct.is_finite() && self.c_uct > 0.0) {
            v.push(format!("search.c_uct must be > 0, got {}", self.c_uct));
        }
        for (name, value) in [
            ("max_improve_children", self.max_improve_children),
            ("max_debug_depth", self.max_debug_depth),
            ("stagnation_window", self.stagnation_window),
            ("num_trees", self.num_trees),
        ] {
            if value == 0 {
                v.push(format!("search.{name} must be positive"));
            }
        }
        if self.lesson_window == 0 {
            v.push("search.lesson_window must be positive".to_string());
        }
        v
    }
}

/// Nodes of one tree plus the incumbent and stagnation bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeState {
    pub tree: u32,
    pub nodes: Vec<SearchNode>,
    pub best: Option<NodeId>,
    pub valid_since_best: u32,
    pub elapsed: f64,
    /// Idea texts of draft nodes, oldest first.
    pub ideas: Vec<String>,
}

impl TreeState {
    pub fn new(tree: u32) -> Self {
        Self {
            tree,
            nodes: vec![SearchNode::root()],
            best: None,
            valid_since_best: 0,
            elapsed: 0.0,
            ideas: Vec::new(),
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Appends a child and wires it into its parent. Branch and debug depth
    /// follow from the parent and the action.
    pub fn add_child(&mut self, parent: NodeId, action: Action, created_at: f64) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let p = self.node(parent);
        let branch = if p.is_root() { id } else { p.branch };
        let debug_depth = match action {
            Action::Debug => p.debug_depth + 1,
            _ => 0,
        };
        let mut node = SearchNode::root();
        node.id = id;
        node.parent = Some(parent);
        node.status = NodeStatus::DraftPending;
        node.action = Some(action);
        node.branch = branch;
        node.debug_depth = debug_depth;
        node.created_at = created_at;
        self.nodes.push(node);
        self.node_mut(parent).children.push(id);
        id
    }

    /// Ids from `leaf` up to the root, inclusive.
    pub fn path_to_root(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn valid_nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter().filter(|n| n.status == NodeStatus::Valid)
    }
}

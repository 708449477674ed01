//! UCT selection, expansion rules and backpropagation.

use crate::tree::{NodeId, NodeStatus, SearchConfig, SelectionPolicy, TreeState};

/// `Q + c * sqrt(ln(N_parent) / N)`; unvisited children score `+inf`.
pub fn uct_score(value: f64, visits: u64, parent_visits: u64, c_uct: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let parent = (parent_visits.max(1)) as f64;
    value + c_uct * (parent.ln() / visits as f64).sqrt()
}

pub fn is_fully_expanded(tree: &TreeState, id: NodeId, cfg: &SearchConfig) -> bool {
    let node = tree.node(id);
    match node.status {
        NodeStatus::Root => {
            !(node.children.is_empty() || tree.valid_since_best >= cfg.stagnation_window)
        }
        NodeStatus::Buggy => true,
        NodeStatus::Valid => node.children.len() >= cfg.max_improve_children as usize,
        // never selected: pending nodes only exist inside one expansion step
        NodeStatus::DraftPending => true,
    }
}

/// Child with the highest UCT score; ties go to the earliest-created child.
pub fn best_uct_child(tree: &TreeState, id: NodeId, c_uct: f64) -> Option<NodeId> {
    let node = tree.node(id);
    let mut best: Option<(NodeId, f64)> = None;
    for &c in &node.children {
        let child = tree.node(c);
        let s = uct_score(child.value, child.visits, node.visits, c_uct);
        match best {
            Some((_, bs)) if s <= bs => {}
            _ => best = Some((c, s)),
        }
    }
    best.map(|(c, _)| c)
}

/// Descends from the root along max-UCT children, stopping at the first node
/// that is not fully expanded. A descent ending at a fully expanded leaf
/// re-activates the root.
pub fn select_uct(tree: &TreeState, cfg: &SearchConfig) -> NodeId {
    let mut cur = tree.root();
    loop {
        if !is_fully_expanded(tree, cur, cfg) {
            return cur;
        }
        match best_uct_child(tree, cur, cfg.c_uct) {
            Some(next) => cur = next,
            None => return tree.root(),
        }
    }
}

/// Best valid node, ignoring the branching limit; the root while none exists.
pub fn select_greedy(tree: &TreeState) -> NodeId {
    tree.best.unwrap_or(tree.root())
}

pub fn select_candidate(tree: &TreeState, cfg: &SearchConfig) -> NodeId {
    match cfg.policy {
        SelectionPolicy::Uct => select_uct(tree, cfg),
        SelectionPolicy::Greedy => select_greedy(tree),
    }
}

/// Adds one visit with `reward` to every node from `leaf` to the root.
/// Returns the updated path.
pub fn backpropagate(tree: &mut TreeState, leaf: NodeId, reward: f64) -> Vec<NodeId> {
    let path = tree.path_to_root(leaf);
    for &id in &path {
        let n = tree.node_mut(id);
        n.visits += 1;
        n.value += (reward - n.value) / n.visits as f64;
    }
    path
}

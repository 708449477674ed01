//! Budgeted tree search: selection, expansion, debugging, lessons and
//! backpropagation for one tree, plus the state shared between trees.

mod engine;
pub mod select;

use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use engine::{run_tree, SearchError, Shared};
pub use select::{backpropagate, is_fully_expanded, select_candidate, uct_score};

use crate::repo::SolutionRepo;
use crate::tree::NodeId;

/// Consumed budget of one tree.
pub trait Budget: Send {
    fn elapsed(&self) -> f64;
    /// Records simulated time; wall-clock budgets ignore it.
    fn charge(&mut self, dt: f64);
}

/// Simulated time: the sum of everything charged.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimBudget {
    elapsed: f64,
}

impl SimBudget {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Budget for SimBudget {
    fn elapsed(&self) -> f64 {
        self.elapsed
    }

    fn charge(&mut self, dt: f64) {
        self.elapsed += dt.max(0.0);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WallBudget {
    start: Instant,
}

impl WallBudget {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Budget for WallBudget {
    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn charge(&mut self, _dt: f64) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub tree: u32,
    pub node: NodeId,
    pub metric: f64,
    pub oriented: f64,
    pub repo: SolutionRepo,
}

/// Best solution across all trees. Offers are serialized by one lock;
/// only strict improvements replace the incumbent.
#[derive(Debug, Default)]
pub struct GlobalBest {
    inner: Mutex<Option<BestEntry>>,
}

impl GlobalBest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn offer(&self, candidate: BestEntry) -> bool {
        self.offer_then(candidate, |better| better)
    }

    /// Like [`offer`](Self::offer), running `then` with the verdict while the
    /// register is still locked, so callers can log improvements in the order
    /// they took effect.
    pub fn offer_then<R>(&self, candidate: BestEntry, then: impl FnOnce(bool) -> R) -> R {
        let mut cur = self.inner.lock();
        let better = cur.as_ref().is_none_or(|b| candidate.oriented > b.oriented);
        if better {
            *cur = Some(candidate);
        }
        then(better)
    }

    pub fn get(&self) -> Option<BestEntry> {
        self.inner.lock().clone()
    }
}

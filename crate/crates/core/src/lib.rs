//! Budget-aware Monte Carlo tree search over candidate solution repositories.
//!
//! Each node holds a small multi-file program; expansion asks a [`drivers::Generator`]
//! to draft, improve or debug it, the [`harness::Executor`] runs it, and rewards
//! trade the achieved metric off against execution time. Lessons distilled from
//! finished nodes are fed back into later prompts.

// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod drivers;
pub mod export;
pub mod harness;
pub mod lessons;
pub mod repo;
pub mod report;
pub mod reward;
pub mod run;
pub mod search;
pub mod sim;
pub mod sweep;
pub mod trajectory;
pub mod tree;

//! Seed sweeps over in-memory sim runs, for ablations and benchmarks.
//! Seeds run in parallel with the `parallel` feature, sequentially otherwise;
//! the outcomes are identical either way.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::run::{run_sim, RunError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Explored nodes, root excluded.
    pub nodes: usize,
    pub valid: usize,
    pub effective_solution_rate: f64,
    /// Oriented metric of the final best, if any valid node was found.
    pub best: Option<f64>,
    pub elapsed: f64,
}

pub fn run_seed(base: &RunConfig, seed: u64) -> Result<SeedOutcome, RunError> {
    let mut cfg = base.clone();
    cfg.search.seed = seed;
    let r = run_sim(&cfg)?;
    Ok(SeedOutcome {
        seed,
        nodes: r.trees.iter().map(|t| t.len() - 1).sum(),
        valid: r.report.valid_solutions,
        effective_solution_rate: r.report.effective_solution_rate,
        best: r.best.map(|b| b.oriented),
        elapsed: r.trees.iter().map(|t| t.elapsed).fold(0.0, f64::max),
    })
}

pub fn sweep_sequential(base: &RunConfig, seeds: &[u64]) -> Result<Vec<SeedOutcome>, RunError> {
    seeds.iter().map(|&s| run_seed(base, s)).collect()
}

#[cfg(feature = "parallel")]
pub fn sweep(base: &RunConfig, seeds: &[u64]) -> Result<Vec<SeedOutcome>, RunError> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| run_seed(base, s)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn sweep(base: &RunConfig, seeds: &[u64]) -> Result<Vec<SeedOutcome>, RunError> {
    sweep_sequential(base, seeds)
}

/// Paired comparison of `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// Paired t statistic; infinite when every difference is equal and non-zero.
    pub t: f64,
}

pub fn paired(a: &[f64], b: &[f64]) -> Paired {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let sd = var.sqrt();
    let t = if sd > 0.0 {
        mean / (sd / (n as f64).sqrt())
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    Paired {
        n,
        mean_diff: mean,
        sd_diff: sd,
        t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_t_by_hand() {
        // differences 1, 2, 3: mean 2, sd 1, t = 2 / (1 / sqrt 3)
        let p = paired(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]);
        assert_eq!(p.mean_diff, 2.0);
        assert_eq!(p.sd_diff, 1.0);
        assert!((p.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(paired(&[1.0], &[1.0]).t, 0.0);
    }

    #[test]
    fn parallel_matches_sequential() {
        let base = RunConfig::default();
        let seeds = [1, 2, 3, 4];
        assert_eq!(
            sweep(&base, &seeds).unwrap(),
            sweep_sequential(&base, &seeds).unwrap()
        );
    }
}

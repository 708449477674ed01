//! Metric orientation, history normalization and the efficiency-guided reward.
//!
//! Every comparison in the search runs on *oriented* values: the raw metric
//! when higher is better, its negation otherwise. Normalization and the
//! incumbent test never look at raw metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default exponent of the latency factor `(t / L)^w`.
pub const DEFAULT_PENALTY_WEIGHT: f64 = -0.07;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("metric value {0} is not finite")]
    InvalidMetric(f64),
    #[error("normalization history is empty")]
    EmptyHistory,
    #[error("invalid execution cost: t={t}, limit={limit}")]
    InvalidCost { t: f64, limit: f64 },
    #[error("penalty weight {0} outside (-1, 0]")]
    InvalidWeight(f64),
}

/// Name and optimization direction of the validation metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub lower_is_better: bool,
}

impl MetricSpec {
    pub fn new(name: impl Into<String>, lower_is_better: bool) -> Self {
        Self {
            name: name.into(),
            lower_is_better,
        }
    }

    pub fn higher_is_better(name: impl Into<String>) -> Self {
        Self::new(name, false)
    }

    pub fn oriented(&self, raw: f64) -> Result<f64, RewardError> {
        oriented_metric(raw, self)
    }
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self::higher_is_better("score")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Latency exponent. Zero disables the penalty.
    pub w: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            w: DEFAULT_PENALTY_WEIGHT,
        }
    }
}

impl RewardParams {
    pub fn new(w: f64) -> Result<Self, RewardError> {
        let p = Self { w };
        p.validate()?;
        Ok(p)
    }

    /// Accepts `w` in `(-1, 0]`.
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.w.is_finite() && self.w <= 0.0 && self.w > -1.0 {
            Ok(())
        } else {
            Err(RewardError::InvalidWeight(self.w))
        }
    }
}

/// Execution time of a node and the per-node limit it ran under, in the same unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionCost {
    pub t: f64,
    pub limit: f64,
}

impl ExecutionCost {
    pub fn new(t: f64, limit: f64) -> Result<Self, RewardError> {
        if !(t.is_finite() && limit.is_finite()) || t <= 0.0 || limit <= 0.0 || t > limit {
            return Err(RewardError::InvalidCost { t, limit });
        }
        Ok(Self { t, limit })
    }

    /// Clamps `t` into `(0, limit]`. Used for killed executions.
    pub fn clamped(t: f64, limit: f64) -> Self {
        let t = if t.is_finite() && t > 0.0 {
            t.min(limit)
        } else {
            f64::MIN_POSITIVE.min(limit)
        };
        Self { t, limit }
    }

    pub fn ratio(&self) -> f64 {
        self.t / self.limit
    }
}

pub fn oriented_metric(raw: f64, spec: &MetricSpec) -> Result<f64, RewardError> {
    if !raw.is_finite() {
        return Err(RewardError::InvalidMetric(raw));
    }
    Ok(if spec.lower_is_better { -raw } else { raw })
}

/// Min-max normalizes `value` against the oriented metrics of all valid nodes
/// explored so far. A degenerate history (max == min) maps to exactly 0.5.
pub fn global_normalized_score(value: f64, history: &[f64]) -> Result<f64, RewardError> {
    let mut it = history.iter().copied();
    let first = it.next().ok_or(RewardError::EmptyHistory)?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return Ok(0.5);
    }
    Ok(((value - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// `g * (t / L)^w`. With `w < 0` a node finishing before its limit gets boosted.
pub fn efficiency_reward(
    g: f64,
    cost: ExecutionCost,
    params: RewardParams,
) -> Result<f64, RewardError> {
    if !(cost.t > 0.0) || !(cost.limit > 0.0) {
        return Err(RewardError::InvalidCost {
            t: cost.t,
            limit: cost.limit,
        });
    }
    if params.w == 0.0 {
        return Ok(g);
    }
    Ok(g * cost.ratio().powf(params.w))
}

/// Strict improvement over the incumbent; an absent incumbent is always beaten.
pub fn is_improved(candidate: f64, incumbent: Option<f64>) -> bool {
    match incumbent {
        None => true,
        Some(best) => candidate > best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn orientation_flips_lower_is_better() {
        let acc = MetricSpec::new("accuracy", false);
        let rmse = MetricSpec::new("rmse", true);
        assert_eq!(oriented_metric(0.9, &acc).unwrap(), 0.9);
        assert_eq!(oriented_metric(0.3, &rmse).unwrap(), -0.3);
        assert!(oriented_metric(0.3, &rmse).unwrap() > oriented_metric(0.5, &rmse).unwrap());
        assert!(matches!(
            oriented_metric(f64::NAN, &acc),
            Err(RewardError::InvalidMetric(_))
        ));
    }

    #[test]
    fn orientation_agrees_with_smaller_wins_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rmse = MetricSpec::new("rmse", true);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(0.0..10.0);
            let b: f64 = rng.random_range(0.0..10.0);
            let oriented = rmse.oriented(a).unwrap() > rmse.oriented(b).unwrap();
            assert_eq!(oriented, a < b);
        }
    }

    #[test]
    fn normalized_score_cases() {
        let g = global_normalized_score(0.5, &[0.2, 0.5, 0.8]).unwrap();
        assert!((g - (0.5 - 0.2) / (0.8 - 0.2)).abs() < 1e-15);
        assert_eq!(global_normalized_score(0.7, &[0.7, 0.7, 0.7]).unwrap(), 0.5);
        assert_eq!(global_normalized_score(0.8, &[0.2, 0.5, 0.8]).unwrap(), 1.0);
        assert_eq!(
            global_normalized_score(0.1, &[]),
            Err(RewardError::EmptyHistory)
        );
    }

    #[test]
    fn reward_examples() {
        let p = RewardParams::default();
        let cost = ExecutionCost::new(1800.0, 3600.0).unwrap();
        let r = efficiency_reward(0.8, cost, p).unwrap();
        // 0.8 * 0.5^-0.07, 40-digit reference
        assert!((r - 0.839_773_346_898_453_8).abs() < 1e-12);
        let at_limit = ExecutionCost::new(3600.0, 3600.0).unwrap();
        assert_eq!(efficiency_reward(0.8, at_limit, p).unwrap(), 0.8);
        assert_eq!(
            efficiency_reward(0.8, cost, RewardParams { w: 0.0 }).unwrap(),
            0.8
        );
        assert!(efficiency_reward(0.8, ExecutionCost { t: 0.0, limit: 1.0 }, p).is_err());
    }

    #[test]
    fn improvement_is_strict() {
        assert!(is_improved(0.6, None));
        assert!(!is_improved(0.6, Some(0.6)));
        let rmse = MetricSpec::new("rmse", true);
        assert!(is_improved(
            rmse.oriented(0.3).unwrap(),
            Some(rmse.oriented(0.5).unwrap())
        ));
    }

    #[test]
    fn weight_validation() {
        assert!(RewardParams::new(0.1).is_err());
        assert!(RewardParams::new(-1.0).is_err());
        assert!(RewardParams::new(0.0).is_ok());
        assert!(RewardParams::new(-0.15).is_ok());
    }

    #[test]
    fn cost_invariants() {
        assert!(ExecutionCost::new(2.0, 1.0).is_err());
        assert!(ExecutionCost::new(0.0, 1.0).is_err());
        assert_eq!(ExecutionCost::clamped(5.0, 2.0).t, 2.0);
    }

    proptest! {
        #[test]
        fn faster_is_rewarded_more(g in 0.01f64..=1.0, l in 1.0f64..1e4, a in 0.001f64..1.0, b in 0.001f64..1.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (fast, slow) = if a < b { (a, b) } else { (b, a) };
            let p = RewardParams::default();
            let rf = efficiency_reward(g, ExecutionCost::new(fast * l, l).unwrap(), p).unwrap();
            let rs = efficiency_reward(g, ExecutionCost::new(slow * l, l).unwrap(), p).unwrap();
            prop_assert!(rf > rs);
        }

        #[test]
        fn normalized_in_unit_interval(hist in proptest::collection::vec(-1e6f64..1e6, 1..50), idx in 0usize..50) {
            let v = hist[idx % hist.len()];
            let g = global_normalized_score(v, &hist).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
        }

        #[test]
        fn zero_weight_is_identity(g in 0.0f64..=1.0, frac in 0.001f64..=1.0) {
            let r = efficiency_reward(g, ExecutionCost::new(frac * 10.0, 10.0).unwrap(), RewardParams { w: 0.0 }).unwrap();
            prop_assert_eq!(r.to_bits(), g.to_bits());
        }

        #[test]
        fn double_orientation_round_trips(m in -1e9f64..1e9) {
            let spec = MetricSpec::new("loss", true);
            let twice = spec.oriented(spec.oriented(m).unwrap()).unwrap();
            prop_assert_eq!(twice, m);
        }
    }
}

//! Seeded synthetic solution landscape.
//!
//! Every node carries a hidden latent solution (quality, cost scale, bug
//! flag). Generated repositories are placeholders whose `config.py` names the
//! latent, so the simulated executor can look it up exactly like a real run
//! would read its own code.

pub mod rng;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drivers::{
    CallSite, DebugLessonRequest, DebugRequest, Distilled, DraftRequest, Drafted, Edit, GenError,
    Generator, ImproveRequest, ReviewRecord, SolutionLessonRequest, TaskContext, MAIN_FILE,
};
use crate::harness::{
    deterministic_review, ExecRequest, ExecutionOutcome, Executor, ExitStatus, HarnessError,
};
use crate::lessons::{shingle_duplicate, Lesson, LessonBody, LessonDraft, LessonId};
use crate::repo::{DiffHunk, DiffSet, SolutionRepo};
use crate::reward::MetricSpec;
use rng::{stream, Purpose};

pub const CONFIG_FILE: &str = "config.py";

const TECHNIQUES: [&str; 8] = [
    "logistic regression",
    "gradient boosted trees",
    "random forest",
    "small convolutional network",
    "multilayer perceptron",
    "k-nearest neighbours",
    "linear SVM",
    "fine-tuned transformer",
];

const BUG_KINDS: [&str; 6] = [
    "ShapeMismatchError",
    "KeyError on a missing column",
    "dtype mismatch between float64 and float32",
    "CUDA out of memory",
    "FileNotFoundError for the cached features",
    "NaN loss after the first epoch",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dist {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeParams {
    /// Latent quality of a fresh draft.
    pub draft_quality: Dist,
    /// Quality increment of an improvement before depth decay.
    pub improve_delta: Dist,
    /// Per-depth decay of improvement increments, in (0, 1].
    pub gamma: f64,
    pub bug_prob: f64,
    pub fix_prob: f64,
    /// Log-normal execution cost scale of a draft.
    pub cost_log_mean: f64,
    pub cost_log_sd: f64,
    /// Log-sd of the cost scale change an improvement introduces.
    pub cost_drift_sd: f64,
    /// Log-sd of run-to-run execution time noise.
    pub exec_noise_sd: f64,
    /// Correlation between draft quality and log cost.
    pub rho: f64,
    /// Mean shift of the improvement increment when a lesson is cited.
    pub lesson_boost: f64,
    /// Probability of citing each injected lesson.
    pub cite_prob: f64,
    /// Observation noise on the printed metric.
    pub obs_noise: f64,
    /// Budget charged per generator call.
    pub gen_overhead: f64,
    /// Cost scale multiplier applied when a debug attempt fixes a timeout.
    pub timeout_fix_speedup: f64,
}

impl Default for LandscapeParams {
    fn default() -> Self {
        Self {
            draft_quality: Dist { mean: 0.6, sd: 0.1 },
            improve_delta: Dist {
                mean: 0.0,
                sd: 0.03,
            },
            gamma: 0.8,
            bug_prob: 0.25,
            fix_prob: 0.5,
            cost_log_mean: 2.5f64.ln(),
            cost_log_sd: 1.0,
            cost_drift_sd: 0.1,
            exec_noise_sd: 0.1,
            rho: 0.0,
            lesson_boost: 0.01,
            cite_prob: 0.5,
            obs_noise: 0.005,
            gen_overhead: 0.5,
            timeout_fix_speedup: 0.25,
        }
    }
}

impl LandscapeParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, p) in [
            ("bug_prob", self.bug_prob),
            ("fix_prob", self.fix_prob),
            ("cite_prob", self.cite_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("landscape.{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            v.push(format!(
                "landscape.gamma must be in (0, 1], got {}",
                self.gamma
            ));
        }
        if !(self.timeout_fix_speedup > 0.0 && self.timeout_fix_speedup <= 1.0) {
            v.push(format!(
                "landscape.timeout_fix_speedup must be in (0, 1], got {}",
                self.timeout_fix_speedup
            ));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            v.push(format!(
                "landscape.rho must be in [-1, 1], got {}",
                self.rho
            ));
        }
        for (name, sd) in [
            ("draft_quality.sd", self.draft_quality.sd),
            ("improve_delta.sd", self.improve_delta.sd),
            ("cost_log_sd", self.cost_log_sd),
            ("cost_drift_sd", self.cost_drift_sd),
            ("exec_noise_sd", self.exec_noise_sd),
            ("obs_noise", self.obs_noise),
            ("gen_overhead", self.gen_overhead),
        ] {
            if !(sd.is_finite() && sd >= 0.0) {
                v.push(format!(
                    "landscape.{name} must be finite and >= 0, got {sd}"
                ));
            }
        }
        for (name, x) in [
            ("draft_quality.mean", self.draft_quality.mean),
            ("improve_delta.mean", self.improve_delta.mean),
            ("cost_log_mean", self.cost_log_mean),
            ("lesson_boost", self.lesson_boost),
        ] {
            if !x.is_finite() {
                v.push(format!("landscape.{name} must be finite"));
            }
        }
        v
    }
}

/// Hidden truth behind one simulated node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub quality: f64,
    pub cost_scale: f64,
    pub buggy: bool,
    /// Improvements since the draft.
    pub depth: u32,
    pub technique: u32,
    pub bug_kind: u32,
}

/// Address of the draws for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimKey {
    pub seed: u64,
    pub tree: u32,
    pub node: u32,
}

impl SimKey {
    fn rng(self, p: Purpose) -> rand_chacha::ChaCha8Rng {
        stream(self.seed, self.tree, self.node, p)
    }

    fn normal(self, p: Purpose) -> f64 {
        self.rng(p).sample(StandardNormal)
    }

    fn uniform(self, p: Purpose) -> f64 {
        self.rng(p).random::<f64>()
    }

    fn index(self, p: Purpose, n: usize) -> u32 {
        self.rng(p).random_range(0..n as u32)
    }
}

pub fn sim_draft(p: &LandscapeParams, key: SimKey) -> Latent {
    let zq = key.normal(Purpose::DraftQuality);
    let zc = key.normal(Purpose::DraftCost);
    let zcost = p.rho * zq + (1.0 - p.rho * p.rho).max(0.0).sqrt() * zc;
    Latent {
        quality: p.draft_quality.mean + p.draft_quality.sd * zq,
        cost_scale: (p.cost_log_mean + p.cost_log_sd * zcost).exp(),
        buggy: key.uniform(Purpose::Bug) < p.bug_prob,
        depth: 0,
        technique: key.index(Purpose::Technique, TECHNIQUES.len()),
        bug_kind: key.index(Purpose::BugKind, BUG_KINDS.len()),
    }
}

/// Child = parent + gamma^depth * delta, delta shifted by the lesson boost when citing.
pub fn sim_improve(p: &LandscapeParams, key: SimKey, parent: &Latent, cited: bool) -> Latent {
    let boost = if cited { p.lesson_boost } else { 0.0 };
    let delta =
        p.improve_delta.mean + boost + p.improve_delta.sd * key.normal(Purpose::ImproveDelta);
    Latent {
        quality: parent.quality + p.gamma.powi(parent.depth as i32) * delta,
        cost_scale: parent.cost_scale * (p.cost_drift_sd * key.normal(Purpose::CostDrift)).exp(),
        buggy: key.uniform(Purpose::Bug) < p.bug_prob,
        depth: parent.depth + 1,
        technique: key.index(Purpose::Technique, TECHNIQUES.len()),
        bug_kind: key.index(Purpose::BugKind, BUG_KINDS.len()),
    }
}

/// A debug attempt keeps the solution and succeeds with `fix_prob`. Fixing a
/// crash clears the bug; fixing a timeout shrinks the cost scale instead.
pub fn sim_debug(p: &LandscapeParams, key: SimKey, parent: &Latent, timed_out: bool) -> Latent {
    let fixed = key.uniform(Purpose::Fix) < p.fix_prob;
    match (timed_out, fixed) {
        (true, true) => Latent {
            cost_scale: parent.cost_scale * p.timeout_fix_speedup,
            ..*parent
        },
        (true, false) => *parent,
        (false, _) => Latent {
            buggy: !fixed,
            ..*parent
        },
    }
}

/// Each injected lesson is cited independently with `cite_prob`.
pub fn sim_cite(p: &LandscapeParams, key: SimKey, injected: &[LessonId]) -> BTreeSet<LessonId> {
    let mut rng = key.rng(Purpose::Cite);
    injected
        .iter()
        .filter(|_| rng.random::<f64>() < p.cite_prob)
        .copied()
        .collect()
}

/// Printed metric for a latent quality; lower-is-better metrics print `1 - q`.
pub fn raw_metric(observed_quality: f64, metric: &MetricSpec) -> f64 {
    if metric.lower_is_better {
        1.0 - observed_quality
    } else {
        observed_quality
    }
}

const TIMEOUT_OUTPUT: &str = "killed: time limit reached\n";

pub fn sim_execute(
    p: &LandscapeParams,
    key: SimKey,
    latent: &Latent,
    metric: &MetricSpec,
    limit: f64,
    kill_after: f64,
) -> ExecutionOutcome {
    let mut rng = key.rng(Purpose::ExecTime);
    let t = if latent.buggy {
        latent.cost_scale * rng.random_range(0.05..0.3)
    } else {
        latent.cost_scale * (p.exec_noise_sd * rng.sample::<f64, _>(StandardNormal)).exp()
    };
    if t > kill_after && kill_after < limit {
        return ExecutionOutcome::new(
            ExitStatus::Killed,
            "killed: budget exhausted\n".into(),
            kill_after,
            limit,
        );
    }
    if t > limit {
        return ExecutionOutcome::new(ExitStatus::Timeout, TIMEOUT_OUTPUT.into(), limit, limit);
    }
    if latent.buggy {
        let output = format!(
            "Traceback (most recent call last):\n  File \"runfile.py\", line 12, in <module>\nRuntimeError: {}\n",
            BUG_KINDS[latent.bug_kind as usize % BUG_KINDS.len()]
        );
        return ExecutionOutcome::new(ExitStatus::Failure, output, t, limit);
    }
    let observed = latent.quality + p.obs_noise * key.normal(Purpose::Observation);
    let output = format!(
        "training {}\nFinal Validation Metric: {}\n",
        TECHNIQUES[latent.technique as usize % TECHNIQUES.len()],
        raw_metric(observed, metric)
    );
    ExecutionOutcome::new(ExitStatus::Success, output, t, limit)
}

/// Latents of one tree, shared by its generator and executor.
pub type LatentTable = Arc<Mutex<BTreeMap<u32, Latent>>>;

fn latent_id(tree: u32, node: u32) -> String {
    format!("t{tree}-n{node:05}")
}

fn config_source(tree: u32, node: u32, technique: u32) -> String {
    format!(
        "LATENT_ID = \"{}\"\nTECHNIQUE = \"{}\"\n",
        latent_id(tree, node),
        TECHNIQUES[technique as usize % TECHNIQUES.len()]
    )
}

/// Node id named by a placeholder repository's config.
pub fn latent_node(repo: &SolutionRepo) -> Option<u32> {
    let cfg = repo.get(CONFIG_FILE)?;
    let line = cfg.lines().find(|l| l.starts_with("LATENT_ID = "))?;
    let id = line.split('"').nth(1)?;
    id.rsplit_once("-n")?.1.parse().ok()
}

fn placeholder_repo_diff(tree: u32, node: u32, latent: &Latent) -> DiffSet {
    DiffSet::new(vec![
        DiffHunk::create(CONFIG_FILE, config_source(tree, node, latent.technique)),
        DiffHunk::create(
            "model.py",
            "def build(technique):\n    return {\"technique\": technique}\n",
        ),
        DiffHunk::create(
            MAIN_FILE,
            "from config import LATENT_ID, TECHNIQUE\nfrom model import build\n\nif __name__ == \"__main__\":\n    print(LATENT_ID, build(TECHNIQUE))\n",
        ),
    ])
}

/// Swaps the parent's config for the child's.
fn retarget_diff(parent: &SolutionRepo, tree: u32, node: u32, latent: &Latent) -> DiffSet {
    let old = parent.get(CONFIG_FILE).unwrap_or_default().to_string();
    DiffSet::new(vec![DiffHunk::new(
        CONFIG_FILE,
        old,
        config_source(tree, node, latent.technique),
    )])
}

/// Creates a generator/executor pair for one tree.
pub fn simulator(
    params: LandscapeParams,
    seed: u64,
    tree: u32,
    metric: MetricSpec,
) -> (SimGenerator, SimExecutor) {
    let table: LatentTable = Arc::default();
    let gen = SimGenerator {
        params: params.clone(),
        seed,
        tree,
        metric: metric.clone(),
        table: Arc::clone(&table),
    };
    let exec = SimExecutor {
        params,
        seed,
        tree,
        metric,
        table,
    };
    (gen, exec)
}

#[derive(Debug)]
pub struct SimGenerator {
    params: LandscapeParams,
    seed: u64,
    tree: u32,
    metric: MetricSpec,
    table: LatentTable,
}

impl SimGenerator {
    fn key(&self, site: CallSite) -> SimKey {
        SimKey {
            seed: self.seed,
            tree: self.tree,
            node: site.node.0,
        }
    }

    fn lookup(&self, repo: &SolutionRepo) -> Result<(u32, Latent), GenError> {
        let node = latent_node(repo)
            .ok_or_else(|| GenError::Other("repository carries no latent id".into()))?;
        let latent = self
            .table
            .lock()
            .get(&node)
            .copied()
            .ok_or_else(|| GenError::Other(format!("unknown latent n{node:05}")))?;
        Ok((node, latent))
    }

    pub fn latent(&self, node: u32) -> Option<Latent> {
        self.table.lock().get(&node).copied()
    }

    fn ids(lessons: &[Lesson]) -> Vec<LessonId> {
        lessons.iter().map(|l| l.id).collect()
    }
}

fn metric_phrase(delta: f64) -> String {
    let pct = (delta * 100.0).round() as i64;
    match pct.cmp(&0) {
        std::cmp::Ordering::Greater => {
            format!("improved the validation score by about {pct} points")
        }
        std::cmp::Ordering::Less => {
            format!("lowered the validation score by about {} points", -pct)
        }
        std::cmp::Ordering::Equal => "left the validation score essentially unchanged".to_string(),
    }
}

impl Generator for SimGenerator {
    fn parse_metric_spec(&mut self, _description: &str) -> Result<MetricSpec, GenError> {
        Ok(self.metric.clone())
    }

    fn draft(&mut self, req: DraftRequest<'_>) -> Result<Drafted, GenError> {
        let key = self.key(req.site);
        let latent = sim_draft(&self.params, key);
        self.table.lock().insert(key.node, latent);
        let citations = sim_cite(&self.params, key, &Self::ids(req.lessons));
        let technique = TECHNIQUES[latent.technique as usize];
        let idea = if req.lessons.is_empty() {
            format!("Lightweight baseline built on {technique}.")
        } else {
            let cites: Vec<String> = citations.iter().map(|c| format!("Cite {c}")).collect();
            format!(
                "Evolved pipeline built on {technique}. {}",
                cites.join(". ")
            )
        };
        Ok(Drafted {
            idea,
            diff: placeholder_repo_diff(self.tree, key.node, &latent),
            citations,
        })
    }

    fn improve(&mut self, req: ImproveRequest<'_>) -> Result<Edit, GenError> {
        let key = self.key(req.site);
        let (_, parent) = self.lookup(req.parent)?;
        let citations = sim_cite(&self.params, key, &Self::ids(req.lessons));
        let child = sim_improve(&self.params, key, &parent, !citations.is_empty());
        self.table.lock().insert(key.node, child);
        Ok(Edit {
            diff: retarget_diff(req.parent, self.tree, key.node, &child),
            citations,
            analysis: String::new(),
        })
    }

    fn debug(&mut self, req: DebugRequest<'_>) -> Result<Edit, GenError> {
        let key = self.key(req.site);
        let (_, parent) = self.lookup(req.repo)?;
        let citations = sim_cite(&self.params, key, &Self::ids(req.lessons));
        let child = sim_debug(
            &self.params,
            key,
            &parent,
            req.output.contains(TIMEOUT_OUTPUT),
        );
        self.table.lock().insert(key.node, child);
        Ok(Edit {
            diff: retarget_diff(req.repo, self.tree, key.node, &child),
            citations,
            analysis: format!(
                "The run failed with {}.",
                BUG_KINDS[parent.bug_kind as usize % BUG_KINDS.len()]
            ),
        })
    }

    fn review_execution(
        &mut self,
        _ctx: &TaskContext,
        _site: CallSite,
        _repo: &SolutionRepo,
        outcome: &ExecutionOutcome,
    ) -> Result<ReviewRecord, GenError> {
        Ok(deterministic_review(outcome))
    }

    fn distill_solution_lesson(
        &mut self,
        req: SolutionLessonRequest<'_>,
    ) -> Result<Distilled, GenError> {
        let (_, new) = self.lookup(req.new.repo)?;
        let technique = TECHNIQUES[new.technique as usize];
        let oriented = |m: f64| if self.metric.lower_is_better { -m } else { m };
        let (impact, rule) = match req.best {
            Some(best) => {
                let delta = oriented(req.new.metric) - oriented(best.metric);
                let speed = if req.new.exec_time < best.exec_time {
                    "faster"
                } else {
                    "slower"
                };
                (
                    format!(
                        "Compared with the incumbent it {} and ran {speed}.",
                        metric_phrase(delta)
                    ),
                    if delta > 0.0 {
                        format!("Prefer {technique} style changes when refining this pipeline.")
                    } else {
                        format!("Avoid relying on {technique} style changes for this task.")
                    },
                )
            }
            None => (
                "First valid solution; it establishes the baseline score.".to_string(),
                format!("A {technique} baseline is a reliable starting point for this task."),
            ),
        };
        Ok(Distilled {
            title: format!("Effect of {technique}"),
            body: LessonBody::Solution {
                causal_change: format!("Switched the modelling step to {technique}."),
                impact_analysis: impact,
                generalized_rule: rule,
            },
        })
    }

    fn distill_debug_lesson(&mut self, req: DebugLessonRequest<'_>) -> Result<Distilled, GenError> {
        let (_, before) = self.lookup(req.before)?;
        let kind = BUG_KINDS[before.bug_kind as usize % BUG_KINDS.len()];
        Ok(Distilled {
            title: format!("Handle {kind}"),
            body: LessonBody::Debug {
                efficacy: if req.fixed {
                    "The targeted fix resolved the failure.".into()
                } else {
                    "The attempted fix did not resolve the failure.".into()
                },
                failure_logic: format!("The pipeline crashed with {kind}."),
                detection_guidelines: format!("Look for {kind} in the traceback tail."),
            },
        })
    }

    fn review_duplicate(
        &mut self,
        existing: &[Lesson],
        candidate: &LessonDraft,
    ) -> Result<bool, GenError> {
        Ok(shingle_duplicate(existing, candidate))
    }

    fn call_overhead(&self) -> f64 {
        self.params.gen_overhead
    }
}

#[derive(Debug)]
pub struct SimExecutor {
    params: LandscapeParams,
    seed: u64,
    tree: u32,
    metric: MetricSpec,
    table: LatentTable,
}

impl Executor for SimExecutor {
    fn execute(&mut self, req: ExecRequest<'_>) -> Result<ExecutionOutcome, HarnessError> {
        let node = latent_node(req.repo)
            .ok_or_else(|| HarnessError::Other("repository carries no latent id".into()))?;
        let latent = self
            .table
            .lock()
            .get(&node)
            .copied()
            .ok_or_else(|| HarnessError::Other(format!("unknown latent n{node:05}")))?;
        let key = SimKey {
            seed: self.seed,
            tree: self.tree,
            node,
        };
        Ok(sim_execute(
            &self.params,
            key,
            &latent,
            &self.metric,
            req.limit,
            req.kill_after.min(req.limit),
        ))
    }
}

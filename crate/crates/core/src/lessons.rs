//! Lesson pool: solution and debug lessons with deduplication, windowed
//! retrieval, citation parsing and utilization accounting.
//!
//! The pool only grows. Retrieval is capped at the lesson window, storage is
//! not, so transfer accounting always sees the full history.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::trajectory::{Event, EventKind};
use crate::tree::NodeId;

/// Jaccard similarity at or above which the shingle reviewer flags a duplicate.
pub const SHINGLE_DUPLICATE_THRESHOLD: f64 = 0.8;
const SHINGLE_WIDTH: usize = 3;

/// Zero-padded five digit lesson identifier, e.g. `00012`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LessonId(pub u32);

impl fmt::Display for LessonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:05}", self.0)
    }
}

impl FromStr for LessonId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() == 5 && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(LessonId(s.parse().expect("five ascii digits")))
        } else {
            Err(format!("invalid lesson id {s:?}"))
        }
    }
}

impl Serialize for LessonId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LessonId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LessonCategory {
    Solution,
    Debug,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum LessonBody {
    Solution {
        causal_change: String,
        impact_analysis: String,
        generalized_rule: String,
    },
    Debug {
        efficacy: String,
        failure_logic: String,
        detection_guidelines: String,
    },
}

impl LessonBody {
    pub fn category(&self) -> LessonCategory {
        match self {
            LessonBody::Solution { .. } => LessonCategory::Solution,
            LessonBody::Debug { .. } => LessonCategory::Debug,
        }
    }

    pub fn sections(&self) -> [(&'static str, &str); 3] {
        match self {
            LessonBody::Solution {
                causal_change,
                impact_analysis,
                generalized_rule,
            } => [
                ("Causal change", causal_change),
                ("Impact analysis", impact_analysis),
                ("Generalized rule", generalized_rule),
            ],
            LessonBody::Debug {
                efficacy,
                failure_logic,
                detection_guidelines,
            } => [
                ("Fix efficacy", efficacy),
                ("Failure logic", failure_logic),
                ("Detection guidelines", detection_guidelines),
            ],
        }
    }
}

/// Where a lesson came from: tree, node and the node's draft branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub tree: u32,
    pub node: NodeId,
    pub branch: NodeId,
}

/// A lesson before the pool accepts it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonDraft {
    pub title: String,
    pub body: LessonBody,
    pub origin: Origin,
}

impl LessonDraft {
    pub fn category(&self) -> LessonCategory {
        self.body.category()
    }

    pub fn is_well_formed(&self) -> bool {
        !self.title.trim().is_empty()
            && self
                .body
                .sections()
                .iter()
                .all(|(_, s)| !s.trim().is_empty())
    }

    pub fn text(&self) -> String {
        lesson_text(&self.title, &self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lesson {
    pub id: LessonId,
    pub title: String,
    pub body: LessonBody,
    pub origin: Origin,
    pub created_seq: u64,
}

impl Lesson {
    pub fn category(&self) -> LessonCategory {
        self.body.category()
    }

    pub fn text(&self) -> String {
        lesson_text(&self.title, &self.body)
    }

    /// Prompt rendering; the id is spelled the way citations refer to it.
    pub fn render(&self) -> String {
        let mut out = format!("Lesson {}: {}\n", self.id, self.title);
        for (label, text) in self.body.sections() {
            out.push_str(&format!("- {label}: {}\n", text.trim()));
        }
        out
    }
}

fn lesson_text(title: &str, body: &LessonBody) -> String {
    let mut s = title.to_string();
    for (_, text) in body.sections() {
        s.push('\n');
        s.push_str(text);
    }
    s
}

pub fn render_lessons(lessons: &[Lesson]) -> String {
    if lessons.is_empty() {
        return "(no lessons yet)".to_string();
    }
    lessons
        .iter()
        .map(Lesson::render)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AddOutcome {
    Accepted(Lesson),
    Duplicate,
    Malformed,
    /// The reviewer failed; the candidate is parked and the pool unchanged.
    Quarantined(String),
}

#[derive(Debug, Default)]
struct PoolInner {
    /// Lessons of each category in creation order.
    by_category: BTreeMap<LessonCategory, Vec<Lesson>>,
    index: BTreeMap<LessonId, (LessonCategory, usize)>,
    next_seq: u64,
    quarantine: Vec<(LessonDraft, String)>,
}

/// Thread-safe lesson pool. Every mutation happens under one lock, so adds
/// and window reads are linearizable and ids are never reused.
#[derive(Debug, Default)]
pub struct LessonPool {
    inner: Mutex<PoolInner>,
    store: Option<PathBuf>,
}

impl LessonPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// A pool that persists each accepted lesson to `<dir>/<id>.json` and
    /// appends it to `<dir>/index.jsonl`.
    pub fn persistent(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            inner: Mutex::default(),
            store: Some(dir),
        })
    }

    pub fn store_dir(&self) -> Option<&Path> {
        self.store.as_deref()
    }

    /// Runs `reviewer` against existing same-category lessons. Exact
    /// duplicates are rejected before the reviewer is consulted.
    pub fn add<F>(&self, candidate: LessonDraft, reviewer: F) -> AddOutcome
    where
        F: FnOnce(&[Lesson], &LessonDraft) -> Result<bool, String>,
    {
        if !candidate.is_well_formed() {
            return AddOutcome::Malformed;
        }
        let mut inner = self.inner.lock();
        let category = candidate.category();
        let existing = inner
            .by_category
            .get(&category)
            .map_or(&[][..], Vec::as_slice);
        if existing
            .iter()
            .any(|l| l.title == candidate.title && l.body == candidate.body)
        {
            return AddOutcome::Duplicate;
        }
        let duplicate = if existing.is_empty() {
            Ok(false)
        } else {
            reviewer(existing, &candidate)
        };
        match duplicate {
            Err(reason) => {
                log::warn!("lesson review failed, quarantined: {reason}");
                inner.quarantine.push((candidate, reason.clone()));
                AddOutcome::Quarantined(reason)
            }
            Ok(true) => AddOutcome::Duplicate,
            Ok(false) => {
                let seq = inner.next_seq;
                inner.next_seq += 1;
                let id = LessonId(seq as u32 + 1);
                let lesson = Lesson {
                    id,
                    title: candidate.title,
                    body: candidate.body,
                    origin: candidate.origin,
                    created_seq: seq,
                };
                if let Some(dir) = &self.store {
                    if let Err(e) = persist(dir, &lesson) {
                        log::error!("failed to persist lesson {id}: {e}");
                    }
                }
                let list = inner.by_category.entry(category).or_default();
                let pos = list.len();
                list.push(lesson.clone());
                inner.index.insert(id, (category, pos));
                AddOutcome::Accepted(lesson)
            }
        }
    }

    /// The `k` newest lessons of a category, oldest first.
    pub fn recent(&self, category: LessonCategory, k: usize) -> Vec<Lesson> {
        let inner = self.inner.lock();
        let list = inner
            .by_category
            .get(&category)
            .map_or(&[][..], Vec::as_slice);
        list[list.len().saturating_sub(k)..].to_vec()
    }

    pub fn get(&self, id: LessonId) -> Option<Lesson> {
        let inner = self.inner.lock();
        let (category, pos) = inner.index.get(&id)?;
        Some(inner.by_category[category][*pos].clone())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, category: LessonCategory) -> usize {
        self.inner
            .lock()
            .by_category
            .get(&category)
            .map_or(0, Vec::len)
    }

    pub fn all(&self) -> Vec<Lesson> {
        let mut all: Vec<Lesson> = self
            .inner
            .lock()
            .by_category
            .values()
            .flatten()
            .cloned()
            .collect();
        all.sort_by_key(|l| l.id);
        all
    }

    pub fn quarantined(&self) -> Vec<(LessonDraft, String)> {
        self.inner.lock().quarantine.clone()
    }
}

fn persist(dir: &Path, lesson: &Lesson) -> io::Result<()> {
    let doc = serde_json::to_string_pretty(lesson)?;
    fs::write(dir.join(format!("{}.json", lesson.id)), doc)?;
    let mut index = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("index.jsonl"))?;
    writeln!(index, "{}", serde_json::to_string(lesson)?)
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn shingles(text: &str) -> HashSet<Vec<String>> {
    let toks = tokens(text);
    if toks.len() < SHINGLE_WIDTH {
        return std::iter::once(toks).filter(|t| !t.is_empty()).collect();
    }
    toks.windows(SHINGLE_WIDTH)
        .map(<[String]>::to_vec)
        .collect()
}

/// Jaccard similarity of 3-token shingles over lowercased alphanumeric tokens.
pub fn shingle_similarity(a: &str, b: &str) -> f64 {
    let (sa, sb) = (shingles(a), shingles(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    inter as f64 / union as f64
}

/// Model-free duplicate reviewer.
pub fn shingle_duplicate(existing: &[Lesson], candidate: &LessonDraft) -> bool {
    let text = candidate.text();
    existing
        .iter()
        .filter(|l| l.category() == candidate.category())
        .any(|l| shingle_similarity(&l.text(), &text) >= SHINGLE_DUPLICATE_THRESHOLD)
}

fn citation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bCite(?:\s+Lesson)?\s+(\d{5})\b").expect("static regex"))
}

/// Lesson ids cited as `Cite 00012` or `Cite Lesson 00012`.
pub fn parse_citations(text: &str) -> BTreeSet<LessonId> {
    citation_regex()
        .captures_iter(text)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationMetrics {
    /// Generated solutions citing at least one lesson, over all generated solutions.
    pub utilization_rate: f64,
    /// Solution-lesson citations whose origin branch differs from the citing node's.
    pub transfer_rate: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Utilization and transfer rates recomputed from a trajectory.
pub fn utilization_metrics(events: &[Event]) -> UtilizationMetrics {
    let mut branch_of: BTreeMap<(u32, NodeId), NodeId> = BTreeMap::new();
    let mut lessons: BTreeMap<LessonId, (LessonCategory, u32, NodeId)> = BTreeMap::new();
    let mut generated: BTreeSet<(u32, NodeId)> = BTreeSet::new();
    let mut citing: BTreeSet<(u32, NodeId)> = BTreeSet::new();
    let (mut solution_citations, mut transferred) = (0usize, 0usize);

    for ev in events {
        match &ev.kind {
            EventKind::NodeCreated { action, branch, .. } => {
                if let Some(node) = ev.node {
                    branch_of.insert((ev.tree, node), *branch);
                    if action.is_some() {
                        generated.insert((ev.tree, node));
                    }
                }
            }
            // no solution came out of the call, so there was nothing to cite
            EventKind::GeneratorFailed { .. } => {
                if let Some(node) = ev.node {
                    generated.remove(&(ev.tree, node));
                }
            }
            EventKind::LessonAdded {
                lesson,
                category,
                origin_tree,
                origin_branch,
                ..
            } => {
                lessons.insert(*lesson, (*category, *origin_tree, *origin_branch));
            }
            EventKind::LessonCited { lessons: cited } => {
                let Some(node) = ev.node else { continue };
                if !cited.is_empty() {
                    citing.insert((ev.tree, node));
                }
                let own = branch_of.get(&(ev.tree, node)).copied();
                for id in cited {
                    if let Some((LessonCategory::Solution, tree, branch)) = lessons.get(id) {
                        solution_citations += 1;
                        if *tree != ev.tree || Some(*branch) != own {
                            transferred += 1;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    UtilizationMetrics {
        utilization_rate: ratio(citing.intersection(&generated).count(), generated.len()),
        transfer_rate: ratio(transferred, solution_citations),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin(node: u32, branch: u32) -> Origin {
        Origin {
            tree: 0,
            node: NodeId(node),
            branch: NodeId(branch),
        }
    }

    fn solution(title: &str, rule: &str) -> LessonDraft {
        LessonDraft {
            title: title.to_string(),
            body: LessonBody::Solution {
                causal_change: "swapped the backbone".into(),
                impact_analysis: "metric rose by two points".into(),
                generalized_rule: rule.into(),
            },
            origin: origin(1, 1),
        }
    }

    fn never(_: &[Lesson], _: &LessonDraft) -> Result<bool, String> {
        Ok(false)
    }

    #[test]
    fn first_lesson_accepted_and_exact_duplicate_rejected() {
        let pool = LessonPool::new();
        let a = solution("Use cosine schedule", "prefer cosine decay");
        match pool.add(a.clone(), never) {
            AddOutcome::Accepted(l) => {
                assert_eq!(l.id.to_string(), "00001");
                assert_eq!(l.created_seq, 0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(pool.add(a, never), AddOutcome::Duplicate);
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn reviewer_failure_quarantines() {
        let pool = LessonPool::new();
        pool.add(solution("a", "b"), never);
        let out = pool.add(solution("c", "d"), |_, _| Err("timeout".into()));
        assert_eq!(out, AddOutcome::Quarantined("timeout".into()));
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.quarantined().len(), 1);
    }

    #[test]
    fn reviewer_sees_only_same_category() {
        let pool = LessonPool::new();
        pool.add(solution("a", "b"), never);
        let debug = LessonDraft {
            title: "Fix dtype".into(),
            body: LessonBody::Debug {
                efficacy: "fixed".into(),
                failure_logic: "float64 vs float32".into(),
                detection_guidelines: "RuntimeError: expected scalar type".into(),
            },
            origin: origin(2, 1),
        };
        // the reviewer is never consulted: no debug lessons exist yet
        let out = pool.add(debug, |_, _| panic!("no same-category lessons"));
        assert!(matches!(out, AddOutcome::Accepted(_)));
    }

    #[test]
    fn malformed_is_rejected() {
        let pool = LessonPool::new();
        assert_eq!(pool.add(solution("", "x"), never), AddOutcome::Malformed);
    }

    #[test]
    fn windowed_retrieval() {
        let pool = LessonPool::new();
        for i in 0..35 {
            pool.add(
                solution(&format!("lesson {i}"), &format!("rule {i}")),
                never,
            );
        }
        let w = pool.recent(LessonCategory::Solution, 30);
        assert_eq!(w.len(), 30);
        assert_eq!(w.first().unwrap().title, "lesson 5");
        assert_eq!(w.last().unwrap().title, "lesson 34");
        assert!(w.windows(2).all(|p| p[0].created_seq < p[1].created_seq));
        assert!(pool.recent(LessonCategory::Solution, 0).is_empty());
        assert_eq!(pool.recent(LessonCategory::Debug, 30).len(), 0);

        let small = LessonPool::new();
        for i in 0..5 {
            small.add(solution(&format!("s{i}"), "r"), never);
        }
        assert_eq!(small.recent(LessonCategory::Solution, 30).len(), 5);
    }

    #[test]
    fn citations() {
        let ids = |v: &[u32]| v.iter().map(|&i| LessonId(i)).collect::<BTreeSet<_>>();
        assert_eq!(parse_citations("apply mixup. Cite 00012"), ids(&[12]));
        assert_eq!(
            parse_citations("# Cite Lesson 00003: Longer schedule allows better convergence."),
            ids(&[3])
        );
        assert!(parse_citations("no citations here, 00012").is_empty());
        assert!(parse_citations("Cite 000123").is_empty());
        let text = "Cite 00002 then Cite Lesson 00001 and again Cite 00002";
        assert_eq!(parse_citations(text), ids(&[1, 2]));
        assert_eq!(parse_citations(text), parse_citations(text));
    }

    #[test]
    fn persistence_layout() {
        let dir = tempfile::tempdir().unwrap();
        let pool = LessonPool::persistent(dir.path().join("lessons")).unwrap();
        pool.add(solution("a", "b"), never);
        pool.add(solution("c", "d"), never);
        assert!(dir.path().join("lessons/00002.json").is_file());
        let index = fs::read_to_string(dir.path().join("lessons/index.jsonl")).unwrap();
        assert_eq!(index.lines().count(), 2);
        let back: Lesson = serde_json::from_str(index.lines().next().unwrap()).unwrap();
        assert_eq!(back.id, LessonId(1));
    }

    /// Hand-built fixture: 10 near-duplicate pairs (small rewordings of
    /// long lessons) and 10 distinct pairs that share vocabulary.
    #[test]
    fn shingle_threshold_fixture() {
        let base = [
            "Replace the plain cross entropy loss with label smoothing of 0.1 because the validation loss started diverging after epoch three while training accuracy kept climbing",
            "Cache the tokenized dataset to parquet files under the working directory so repeated runs skip the slow preprocessing step and finish within the time limit",
            "Use stratified five fold splits keyed on the target label since random splits produced validation scores that varied by more than two points between seeds",
            "Lower the learning rate of the pretrained backbone to one tenth of the head learning rate to avoid destroying the pretrained features in the first epoch",
            "Add early stopping with patience of three epochs on the validation metric because later epochs only increased the gap between training and validation scores",
            "Cast the image tensors to float32 before normalization because integer tensors silently truncated the mean subtraction and produced constant predictions",
            "Move the model and every batch to the same device before the forward pass since mixing cpu and cuda tensors raised a runtime error in the first batch",
            "Standardize numerical features using statistics computed on the training split only so that the validation set never leaks into the scaling parameters",
            "Replace the single gradient boosting model with an average of three seeds because the ensemble reduced variance and improved the validation auc noticeably",
            "Reduce the image resolution from five hundred twelve to three hundred eighty four pixels which halved the epoch time while keeping the validation score flat",
        ];
        let near = [
            "Replace the plain cross entropy loss with label smoothing of 0.1 because the validation loss started diverging after epoch three while training accuracy kept rising",
            "Cache the tokenized dataset to parquet files under the working directory so repeated runs skip the slow preprocessing step and finish within the time budget",
            "Use stratified five fold splits keyed on the target label since random splits produced validation scores that varied by more than two points across seeds",
            "Lower the learning rate of the pretrained backbone to one tenth of the head learning rate to avoid destroying the pretrained features in the first epochs",
            "Add early stopping with patience of three epochs on the validation metric because later epochs only increased the gap between training and validation score",
            "Cast the image tensors to float32 before normalization because integer tensors silently truncated the mean subtraction and produced constant outputs",
            "Move the model and every batch to the same device before the forward pass since mixing cpu and cuda tensors raised a runtime error in the first step",
            "Standardize numerical features using statistics computed on the training split only so that the validation set never leaks into the scaling params",
            "Replace the single gradient boosting model with an average of three seeds because the ensemble reduced variance and improved the validation auc clearly",
            "Reduce the image resolution from five hundred twelve to three hundred eighty four pixels which halved the epoch time while keeping the validation metric flat",
        ];
        let distinct = [
            "Use a cosine learning rate schedule with warmup because the constant rate plateaued early and the validation metric stopped improving after two epochs",
            "Write predictions for the whole test set in the sample submission column order since a reordered file failed the format check",
            "Group the folds by patient identifier because images of the same patient appeared in both splits and inflated the validation score",
            "Freeze batch normalization statistics when fine tuning with tiny batches because the running estimates became noisy and hurt the validation score",
            "Switch the optimizer from stochastic gradient descent to adamw with weight decay which converged in half the epochs on this tabular task",
            "Check for missing columns in the test metadata before merging because a key error was raised when the submission was generated",
            "Limit the number of dataloader workers to the available cpu count since too many workers exhausted shared memory and crashed the run",
            "Target encode high cardinality categorical columns inside each fold to keep validation statistics out of the encoding",
            "Blend the neural network with the gradient boosting model using weights tuned on out of fold predictions which improved auc over either model",
            "Profile the preprocessing pipeline and vectorize the per row python loop, which dominated runtime and blocked longer training",
        ];
        for (a, b) in base.iter().zip(near.iter()) {
            let s = shingle_similarity(a, b);
            assert!(
                s >= SHINGLE_DUPLICATE_THRESHOLD,
                "near pair scored {s}: {a}"
            );
        }
        for (a, b) in base.iter().zip(distinct.iter()) {
            let s = shingle_similarity(a, b);
            assert!(
                s < SHINGLE_DUPLICATE_THRESHOLD,
                "distinct pair scored {s}: {a}"
            );
        }
    }
}

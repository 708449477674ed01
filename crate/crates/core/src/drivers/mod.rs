//! The generator boundary between the search engine and whatever writes
//! solutions, plus the chat-completion implementation of it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::ExecutionOutcome;
use crate::lessons::{Lesson, LessonBody, LessonDraft, LessonId};
use crate::repo::{DiffSet, RepoError, SolutionRepo};
use crate::reward::MetricSpec;
use crate::tree::NodeId;

pub mod client;
pub mod fixture;
pub mod llm;
pub mod ratelimit;
pub mod structured;
pub mod template;

pub use client::{ChatClient, EndpointConfig};
pub use llm::{draft_pipeline, LlmGenerator};
pub use structured::{extract_structured, Shape, Structured, StructuredError};
pub use template::{PromptLibrary, PromptTemplate, TemplateError};

/// Orchestration file name used by generated repositories.
pub const MAIN_FILE: &str = "runfile.py";

/// Outcome of reviewing an execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub summary: String,
    pub metric: Option<f64>,
    pub valid_metric: bool,
}

impl ReviewRecord {
    /// Restores the `valid_metric ⇒ metric present` invariant.
    pub fn normalized(mut self) -> Self {
        if self.metric.is_none_or(|m| !m.is_finite()) {
            self.metric = None;
            self.valid_metric = false;
        }
        self
    }
}

/// Static task information shared by every call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskContext {
    pub description: String,
    /// Candidate architecture notes fed to baseline drafting.
    pub model_arch_desc: String,
    /// Extra wording appended to the submission requirement.
    pub submission_cond: String,
}

impl Default for TaskContext {
    fn default() -> Self {
        Self {
            description: "Maximize the validation score of a predictive model.".into(),
            model_arch_desc: "(none provided)".into(),
            submission_cond: String::new(),
        }
    }
}

/// Where a call originates in the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub tree: u32,
    pub node: NodeId,
    pub branch: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct DraftRequest<'a> {
    pub ctx: &'a TaskContext,
    pub site: CallSite,
    pub lessons: &'a [Lesson],
    /// Previous draft ideas, already truncated to the prompt budget.
    pub prior_ideas: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drafted {
    pub idea: String,
    /// Pure file creations; must include [`MAIN_FILE`].
    pub diff: DiffSet,
    pub citations: BTreeSet<LessonId>,
}

#[derive(Debug, Clone, Copy)]
pub struct ImproveRequest<'a> {
    pub ctx: &'a TaskContext,
    pub site: CallSite,
    pub parent: &'a SolutionRepo,
    /// Review summary and output tail of the parent run.
    pub summary: &'a str,
    pub output: &'a str,
    pub lessons: &'a [Lesson],
}

#[derive(Debug, Clone, Copy)]
pub struct DebugRequest<'a> {
    pub ctx: &'a TaskContext,
    pub site: CallSite,
    pub repo: &'a SolutionRepo,
    pub output: &'a str,
    pub lessons: &'a [Lesson],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edit {
    pub diff: DiffSet,
    pub citations: BTreeSet<LessonId>,
    /// Free-form reasoning attached to the edit (error analysis for debugging).
    pub analysis: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SolutionOutcome<'a> {
    pub repo: &'a SolutionRepo,
    pub metric: f64,
    pub exec_time: f64,
    pub summary: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub struct SolutionLessonRequest<'a> {
    pub ctx: &'a TaskContext,
    pub site: CallSite,
    pub best: Option<SolutionOutcome<'a>>,
    pub new: SolutionOutcome<'a>,
}

#[derive(Debug, Clone, Copy)]
pub struct DebugLessonRequest<'a> {
    pub ctx: &'a TaskContext,
    pub site: CallSite,
    pub before: &'a SolutionRepo,
    pub before_output: &'a str,
    pub error_analysis: &'a str,
    pub diff: &'a DiffSet,
    pub after_output: &'a str,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distilled {
    pub title: String,
    pub body: LessonBody,
}

/// A redacted model exchange, surfaced in the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCallRecord {
    pub purpose: String,
    pub attempts: u32,
    pub request: serde_json::Value,
    pub response: String,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("model endpoint unavailable after {attempts} attempts: {last}")]
    DriverUnavailable { attempts: u32, last: String },
    #[error("malformed response envelope: {0}")]
    DriverProtocolError(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Structured(#[from] StructuredError),
    #[error(transparent)]
    Diff(#[from] RepoError),
    #[error("draft failed at stage {stage}: {source}")]
    DraftFailed {
        stage: &'static str,
        #[source]
        source: Box<GenError>,
    },
    #[error("review failed: {0}")]
    ReviewFailed(String),
    #[error("{0}")]
    Other(String),
}

impl GenError {
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ GenError::DraftFailed { .. } => e,
            e => GenError::DraftFailed {
                stage,
                source: Box::new(e),
            },
        }
    }
}

/// Everything the search needs from a solution writer. One instance serves
/// one tree; implementations may share state behind the scenes.
pub trait Generator: Send {
    fn parse_metric_spec(&mut self, description: &str) -> Result<MetricSpec, GenError>;
    fn draft(&mut self, req: DraftRequest<'_>) -> Result<Drafted, GenError>;
    fn improve(&mut self, req: ImproveRequest<'_>) -> Result<Edit, GenError>;
    fn debug(&mut self, req: DebugRequest<'_>) -> Result<Edit, GenError>;
    fn review_execution(
        &mut self,
        ctx: &TaskContext,
        site: CallSite,
        repo: &SolutionRepo,
        outcome: &ExecutionOutcome,
    ) -> Result<ReviewRecord, GenError>;
    fn distill_solution_lesson(
        &mut self,
        req: SolutionLessonRequest<'_>,
    ) -> Result<Distilled, GenError>;
    fn distill_debug_lesson(&mut self, req: DebugLessonRequest<'_>) -> Result<Distilled, GenError>;
    fn review_duplicate(
        &mut self,
        existing: &[Lesson],
        candidate: &LessonDraft,
    ) -> Result<bool, GenError>;

    /// Budget charged per draft/improve/debug call on top of execution time.
    fn call_overhead(&self) -> f64 {
        0.0
    }

    /// Model exchanges made since the last call, oldest first.
    fn take_calls(&mut self) -> Vec<ModelCallRecord> {
        Vec::new()
    }
}

/// Files rendered for prompts, library files first and main last.
pub fn render_files(repo: &SolutionRepo) -> String {
    let mut out = String::new();
    for (path, content) in repo.files_main_last() {
        out.push_str(&format!("### {path}\n```python\n{content}"));
        if !content.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("```\n\n");
    }
    out
}

/// Newest ideas first, stopping before `budget` characters would be exceeded.
pub fn prior_ideas(ideas: &[String], budget: usize) -> String {
    let mut picked: Vec<&str> = Vec::new();
    let mut used = 0;
    for idea in ideas.iter().rev() {
        let cost = idea.chars().count() + 2;
        if used + cost > budget {
            break;
        }
        used += cost;
        picked.push(idea);
    }
    if picked.is_empty() {
        return "(none)".to_string();
    }
    picked
        .iter()
        .enumerate()
        .map(|(i, idea)| format!("Idea {}:\n{}", i + 1, idea.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

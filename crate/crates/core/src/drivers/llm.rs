//! Generator backed by a chat-completion endpoint and the shipped prompts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use super::client::ChatClient;
use super::structured::{
    extract_structured, labeled_sections, last_fenced_block, Shape, Structured,
};
use super::template::PromptLibrary;
use super::{
    render_files, CallSite, DebugLessonRequest, DebugRequest, Distilled, DraftRequest, Drafted,
    Edit, GenError, Generator, ImproveRequest, ModelCallRecord, ReviewRecord,
    SolutionLessonRequest, SolutionOutcome, StructuredError, TaskContext, MAIN_FILE,
};
use crate::harness::{self, deterministic_review, ExecutionOutcome, ExitStatus, HarnessConfig};
use crate::lessons::{
    parse_citations, render_lessons, shingle_duplicate, Lesson, LessonBody, LessonDraft, LessonId,
};
use crate::repo::{self, parse_diff, render_diff, DiffHunk, DiffSet, SolutionRepo};
use crate::reward::MetricSpec;

/// Per-module unit testing during drafting.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleTesting {
    pub harness: HarnessConfig,
    /// Scratch space; each draft gets its own subdirectory.
    pub scratch_dir: PathBuf,
    pub limit: f64,
    /// Module-scoped debug attempts per failing test.
    pub max_debug: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlmOptions {
    pub module_testing: Option<ModuleTesting>,
    /// Ask the model whether a new lesson duplicates an old one; otherwise use shingles.
    pub model_dedup: bool,
}

pub struct LlmGenerator {
    client: ChatClient,
    prompts: Arc<PromptLibrary>,
    options: LlmOptions,
    calls: Vec<ModelCallRecord>,
}

impl std::fmt::Debug for LlmGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGenerator")
            .field("client", &self.client)
            .field("options", &self.options)
            .finish_non_exhaustive()
    }
}

fn describe_outcome(label: &str, o: &SolutionOutcome<'_>) -> String {
    format!(
        "{label}\nValidation metric: {}\nExecution time: {:.3}\nReview: {}\n\n{}",
        o.metric,
        o.exec_time,
        o.summary.trim(),
        render_files(o.repo)
    )
}

fn code_block(text: &str) -> Option<String> {
    last_fenced_block(text).map(str::to_string)
}

impl LlmGenerator {
    pub fn new(client: ChatClient, prompts: Arc<PromptLibrary>, options: LlmOptions) -> Self {
        Self {
            client,
            prompts,
            options,
            calls: Vec::new(),
        }
    }

    fn with_context(&self, ctx: &TaskContext, body: String) -> Result<String, GenError> {
        let head = self
            .prompts
            .render("task_context", &[("task_description", &ctx.description)])?;
        Ok(head + &body)
    }

    fn with_diff_format(&self, body: String) -> Result<String, GenError> {
        let tail = self.prompts.render("diff_format", &[])?;
        Ok(format!("{body}\n{tail}"))
    }

    /// Sends one prompt and keeps a redacted record of the exchange.
    pub fn ask(&mut self, purpose: &str, prompt: &str) -> Result<String, GenError> {
        let completion = self.client.complete(prompt)?;
        self.calls.push(ModelCallRecord {
            purpose: purpose.to_string(),
            attempts: completion.attempts,
            request: completion.request,
            response: completion.content.clone(),
        });
        Ok(completion.content)
    }

    fn propose_idea(&mut self, req: &DraftRequest<'_>) -> Result<String, GenError> {
        let body = if req.lessons.is_empty() {
            self.prompts.render(
                "initial_idea_proposal_instruction",
                &[
                    ("model_arch_desc", &req.ctx.model_arch_desc),
                    ("previous_ideas", req.prior_ideas),
                ],
            )?
        } else {
            self.prompts.render(
                "idea_improvement_instruction",
                &[
                    ("previous_ideas", req.prior_ideas),
                    ("lessons", &render_lessons(req.lessons)),
                ],
            )?
        };
        let prompt = self.with_context(req.ctx, body)?;
        self.ask("idea", &prompt)
    }

    fn decompose(
        &mut self,
        ctx: &TaskContext,
        idea: &str,
    ) -> Result<Vec<(String, String)>, GenError> {
        let body = self
            .prompts
            .render("modular_decomposition_instruction", &[("idea", idea)])?;
        let prompt = self.with_context(ctx, body)?;
        let answer = self.ask("decompose", &prompt)?;
        match extract_structured(&answer, Shape::ModuleMap)? {
            Structured::ModuleMap(m) => Ok(m),
            _ => unreachable!("module map shape"),
        }
    }

    fn implement_module(
        &mut self,
        ctx: &TaskContext,
        idea: &str,
        library: &SolutionRepo,
        name: &str,
        description: &str,
    ) -> Result<String, GenError> {
        let file_name = format!("{name}.py");
        let body = self.prompts.render(
            "module_implementation_instruction",
            &[
                ("idea", idea),
                ("library_files", &render_library(library)),
                ("file_name", &file_name),
                ("file_description", description),
                ("dir_name", name),
            ],
        )?;
        let prompt = self.with_context(ctx, body)?;
        let answer = self.ask(&format!("implement:{file_name}"), &prompt)?;
        code_block(&answer)
            .ok_or_else(|| StructuredError::Parse(format!("no code block for {file_name}")).into())
    }

    /// Runs a generated usage script against the library; on failure asks for
    /// module-scoped fixes. Returns the (possibly edited) library.
    fn test_module(
        &mut self,
        ctx: &TaskContext,
        site: CallSite,
        library: SolutionRepo,
        name: &str,
    ) -> Result<SolutionRepo, GenError> {
        let Some(cfg) = self.options.module_testing.clone() else {
            return Ok(library);
        };
        let body = self.prompts.render(
            "module_testing_instruction",
            &[("library_files", &render_files(&library))],
        )?;
        let prompt = self.with_context(ctx, body)?;
        let answer = self.ask(&format!("test:{name}.py"), &prompt)?;
        let Some(script) = code_block(&answer) else {
            log::warn!("module test for {name} had no code block; skipped");
            return Ok(library);
        };
        let test_file = format!("test_{name}.py");
        let dir = cfg
            .scratch_dir
            .join(format!("t{}-n{:05}-{name}", site.tree, site.node.0));
        let mut current = library;
        for attempt in 0..=cfg.max_debug {
            let out = run_module_test(&cfg, &dir, &current, &test_file, &script)?;
            if out.exit == ExitStatus::Success {
                return Ok(current);
            }
            if attempt == cfg.max_debug {
                log::warn!("module {name} still failing its test after {attempt} fixes");
                break;
            }
            let body = self.prompts.render(
                "debugging_instruction",
                &[
                    ("lessons", "(none)"),
                    ("files", &render_files(&current)),
                    ("exec_result", &out.output),
                    (
                        "error_analysis",
                        &format!("The usage test {test_file} failed."),
                    ),
                ],
            )?;
            let prompt = self.with_diff_format(self.with_context(ctx, body)?)?;
            let answer = self.ask(&format!("module_debug:{name}.py"), &prompt)?;
            match parse_diff(&answer).and_then(|d| repo::apply_diff(&current, &d)) {
                Ok(next) => current = next,
                Err(e) => log::warn!("module fix for {name} did not apply: {e}"),
            }
        }
        Ok(current)
    }

    fn draft_main(
        &mut self,
        ctx: &TaskContext,
        idea: &str,
        library: &SolutionRepo,
        description: &str,
    ) -> Result<String, GenError> {
        let body = self.prompts.render(
            "solution_drafting_instruction",
            &[
                ("idea", idea),
                ("library_files", &render_library(library)),
                ("file_description", description),
                ("submission_cond", &ctx.submission_cond),
            ],
        )?;
        let prompt = self.with_context(ctx, body)?;
        let answer = self.ask("implement:runfile.py", &prompt)?;
        code_block(&answer)
            .ok_or_else(|| StructuredError::Parse("no code block for runfile.py".into()).into())
    }
}

/// Library files only (no main), or a note when there are none yet.
fn render_library(library: &SolutionRepo) -> String {
    let files: String = library
        .files_main_last()
        .filter(|(p, _)| *p != library.main())
        .map(|(p, c)| format!("### {p}\n```python\n{}\n```\n\n", c.trim_end()))
        .collect();
    if files.is_empty() {
        "(none yet)".to_string()
    } else {
        files
    }
}

fn run_module_test(
    cfg: &ModuleTesting,
    dir: &std::path::Path,
    library: &SolutionRepo,
    test_file: &str,
    script: &str,
) -> Result<ExecutionOutcome, GenError> {
    let mut files = library.modules().clone();
    files.insert(test_file.to_string(), script.to_string());
    let repo = SolutionRepo::new(test_file, files)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| GenError::Other(e.to_string()))?;
    }
    repo::materialize(&repo, dir)?;
    harness::run_command(&cfg.harness, dir, test_file, cfg.limit, cfg.limit)
        .map(|r| r.outcome)
        .map_err(|e| GenError::Other(e.to_string()))
}

/// Design, decompose, implement (with optional module tests) and orchestrate.
/// The idea prompt is the baseline one while no solution lessons exist.
pub fn draft_pipeline(gen: &mut LlmGenerator, req: DraftRequest<'_>) -> Result<Drafted, GenError> {
    let idea = gen.propose_idea(&req).map_err(|e| e.at_stage("idea"))?;
    let mut citations: BTreeSet<LessonId> = parse_citations(&idea);
    let modules = gen
        .decompose(req.ctx, &idea)
        .map_err(|e| e.at_stage("decompose"))?;
    // placeholder main keeps the library a valid repo while modules accrue
    let placeholder = || BTreeMap::from([(MAIN_FILE.to_string(), String::new())]);
    let mut library = SolutionRepo::new(MAIN_FILE, placeholder())?;
    let mut main_description = String::new();
    for (name, description) in &modules {
        if name == "main" {
            main_description = description.clone();
            continue;
        }
        let code = gen
            .implement_module(req.ctx, &idea, &library, name, description)
            .map_err(|e| e.at_stage("implement"))?;
        citations.extend(parse_citations(&code));
        let mut files = library.modules().clone();
        files.insert(format!("{name}.py"), code);
        library = SolutionRepo::new(MAIN_FILE, files)
            .map_err(|e| GenError::from(e).at_stage("implement"))?;
        library = gen
            .test_module(req.ctx, req.site, library, name)
            .map_err(|e| e.at_stage("module_test"))?;
    }
    let main = gen
        .draft_main(req.ctx, &idea, &library, &main_description)
        .map_err(|e| e.at_stage("main"))?;
    citations.extend(parse_citations(&main));
    let mut hunks: Vec<DiffHunk> = library
        .modules()
        .iter()
        .filter(|(p, _)| p.as_str() != MAIN_FILE)
        .map(|(p, c)| DiffHunk::create(p.clone(), c.clone()))
        .collect();
    hunks.push(DiffHunk::create(MAIN_FILE, main));
    Ok(Drafted {
        idea,
        diff: DiffSet::new(hunks),
        citations,
    })
}

impl Generator for LlmGenerator {
    fn parse_metric_spec(&mut self, description: &str) -> Result<MetricSpec, GenError> {
        let body = self.prompts.render("metric_parsing_instruction", &[])?;
        let ctx = TaskContext {
            description: description.to_string(),
            ..TaskContext::default()
        };
        let prompt = self.with_context(&ctx, body)?;
        let answer = self.ask("metric_parsing", &prompt)?;
        match extract_structured(&answer, Shape::MetricSpec)? {
            Structured::MetricSpec(m) => Ok(m),
            _ => unreachable!("metric spec shape"),
        }
    }

    fn draft(&mut self, req: DraftRequest<'_>) -> Result<Drafted, GenError> {
        draft_pipeline(self, req)
    }

    fn improve(&mut self, req: ImproveRequest<'_>) -> Result<Edit, GenError> {
        let previous = format!(
            "{}\n==== Previous Execution Review ====\n{}\n\n==== Previous Execution Output (tail) ====\n{}\n",
            render_files(req.parent),
            req.summary.trim(),
            req.output.trim_end()
        );
        let body = self.prompts.render(
            "solution_improvement_instruction",
            &[
                ("lessons", &render_lessons(req.lessons)),
                ("previous_solution", &previous),
                ("submission_cond", &req.ctx.submission_cond),
            ],
        )?;
        let prompt = self.with_diff_format(self.with_context(req.ctx, body)?)?;
        let answer = self.ask("improve", &prompt)?;
        Ok(Edit {
            diff: parse_diff(&answer)?,
            citations: parse_citations(&answer),
            analysis: String::new(),
        })
    }

    fn debug(&mut self, req: DebugRequest<'_>) -> Result<Edit, GenError> {
        let lessons = render_lessons(req.lessons);
        let files = render_files(req.repo);
        let body = self.prompts.render(
            "bug_analysis_instruction",
            &[
                ("lessons", &lessons),
                ("files", &files),
                ("exec_result", req.output),
            ],
        )?;
        let prompt = self.with_context(req.ctx, body)?;
        let analysis = self.ask("bug_analysis", &prompt)?;
        let body = self.prompts.render(
            "debugging_instruction",
            &[
                ("lessons", &lessons),
                ("files", &files),
                ("exec_result", req.output),
                ("error_analysis", &analysis),
            ],
        )?;
        let prompt = self.with_diff_format(self.with_context(req.ctx, body)?)?;
        let answer = self.ask("debug", &prompt)?;
        let mut citations = parse_citations(&analysis);
        citations.extend(parse_citations(&answer));
        Ok(Edit {
            diff: parse_diff(&answer)?,
            citations,
            analysis,
        })
    }

    fn review_execution(
        &mut self,
        ctx: &TaskContext,
        _site: CallSite,
        repo: &SolutionRepo,
        outcome: &ExecutionOutcome,
    ) -> Result<ReviewRecord, GenError> {
        // a crashed or killed run has nothing for the reviewer to validate
        if outcome.exit != ExitStatus::Success {
            return Ok(deterministic_review(outcome));
        }
        let body = self.prompts.render(
            "execution_result_review_instruction",
            &[
                ("library_files", &render_library(repo)),
                ("code", repo.main_source()),
                ("term_out", &outcome.output),
            ],
        )?;
        let prompt = self.with_context(ctx, body)?;
        let answer = self.ask("review", &prompt)?;
        match extract_structured(&answer, Shape::ReviewRecord) {
            Ok(Structured::ReviewRecord(r)) => Ok(r),
            Ok(_) => unreachable!("review shape"),
            Err(e) => Err(GenError::ReviewFailed(e.to_string())),
        }
    }

    fn distill_solution_lesson(
        &mut self,
        req: SolutionLessonRequest<'_>,
    ) -> Result<Distilled, GenError> {
        let best = req.best.map_or_else(
            || "None (no current best solution exists).".to_string(),
            |b| describe_outcome("Current best solution.", &b),
        );
        let new = describe_outcome("New solution.", &req.new);
        let body = self.prompts.render(
            "solution_lesson_distillation_instruction",
            &[("best_solution", &best), ("new_solution", &new)],
        )?;
        let prompt = self.with_context(req.ctx, body)?;
        let answer = self.ask("solution_lesson", &prompt)?;
        let labels = ["Title", "Summary", "Empirical Findings", "Key Lesson"];
        let s = required_sections(&answer, &labels)?;
        Ok(Distilled {
            title: s[0].clone(),
            body: LessonBody::Solution {
                causal_change: s[1].clone(),
                impact_analysis: s[2].clone(),
                generalized_rule: s[3].clone(),
            },
        })
    }

    fn distill_debug_lesson(&mut self, req: DebugLessonRequest<'_>) -> Result<Distilled, GenError> {
        let body = self.prompts.render(
            "debugging_lesson_distillation_instruction",
            &[
                ("source_files", &render_files(req.before)),
                ("source_exec_result", req.before_output),
                ("source_error_analysis", req.error_analysis),
                ("diff", &render_diff(req.diff)),
                ("final_exec_result", req.after_output),
            ],
        )?;
        let prompt = self.with_context(req.ctx, body)?;
        let answer = self.ask("debug_lesson", &prompt)?;
        let s = required_sections(&answer, &["Title", "Explanation", "Detection"])?;
        let efficacy = if req.fixed {
            "The attempted fix resolved the failure."
        } else {
            "The attempted fix did not resolve the failure."
        };
        Ok(Distilled {
            title: s[0].clone(),
            body: LessonBody::Debug {
                efficacy: efficacy.to_string(),
                failure_logic: s[1].clone(),
                detection_guidelines: s[2].clone(),
            },
        })
    }

    fn review_duplicate(
        &mut self,
        existing: &[Lesson],
        candidate: &LessonDraft,
    ) -> Result<bool, GenError> {
        if !self.options.model_dedup {
            return Ok(shingle_duplicate(existing, candidate));
        }
        let mut new_lesson = format!("{}\n", candidate.title);
        for (label, text) in candidate.body.sections() {
            new_lesson.push_str(&format!("- {label}: {}\n", text.trim()));
        }
        let body = self.prompts.render(
            "lesson_deduplication_instruction",
            &[
                ("existing_lessons", &render_lessons(existing)),
                ("new_lesson", &new_lesson),
            ],
        )?;
        let answer = self.ask("dedup", &body)?;
        match extract_structured(&answer, Shape::DedupVerdict)? {
            Structured::DedupVerdict { duplicate, .. } => Ok(duplicate),
            _ => unreachable!("dedup shape"),
        }
    }

    fn take_calls(&mut self) -> Vec<ModelCallRecord> {
        std::mem::take(&mut self.calls)
    }
}

fn required_sections(text: &str, labels: &[&str]) -> Result<Vec<String>, GenError> {
    labeled_sections(text, labels)
        .into_iter()
        .zip(labels)
        .map(|(s, label)| s.ok_or_else(|| StructuredError::Schema((*label).to_string()).into()))
        .collect()
}

use std::collections::BTreeSet;

use thiserror::Error;

use super::select::{backpropagate, select_candidate};
use super::{BestEntry, Budget, GlobalBest};
use crate::drivers::{
    prior_ideas, CallSite, DebugLessonRequest, DebugRequest, DraftRequest, GenError, Generator,
    ImproveRequest, SolutionLessonRequest, SolutionOutcome, TaskContext, MAIN_FILE,
};
use crate::harness::{ExecRequest, Executor, ExitStatus, HarnessError};
use crate::lessons::{AddOutcome, LessonCategory, LessonDraft, LessonId, LessonPool, Origin};
use crate::repo::{apply_diff, repo_stats, DiffSet, SolutionRepo};
use crate::reward::{
    efficiency_reward, global_normalized_score, is_improved, MetricSpec, RewardParams,
};
use crate::trajectory::{EventKind, Trajectory};
use crate::tree::{Action, NodeId, NodeStatus, SearchConfig, TreeState};

#[derive(Debug, Error)]
pub enum SearchError {
    /// The executor itself broke (not the solution); the run cannot continue.
    #[error("tree {tree}: execution harness failed: {source}")]
    Harness {
        tree: u32,
        #[source]
        source: HarnessError,
    },
}

/// Read-only settings and the structures every tree shares.
#[derive(Debug, Clone, Copy)]
pub struct Shared<'a> {
    pub cfg: &'a SearchConfig,
    pub reward: RewardParams,
    pub metric: &'a MetricSpec,
    pub task: &'a TaskContext,
    pub lessons: &'a LessonPool,
    pub log: &'a Trajectory,
    pub best: &'a GlobalBest,
}

enum Step {
    Continue,
    /// The global budget ran out while this node was in flight.
    Exhausted,
}

struct Worker<'a, 'g> {
    sh: Shared<'a>,
    tree: TreeState,
    gen: &'g mut dyn Generator,
    exec: &'g mut dyn Executor,
    budget: &'g mut dyn Budget,
}

/// Runs one tree until its budget (or iteration cap) is spent.
pub fn run_tree(
    sh: Shared<'_>,
    tree_id: u32,
    gen: &mut dyn Generator,
    exec: &mut dyn Executor,
    budget: &mut dyn Budget,
) -> Result<TreeState, SearchError> {
    let mut w = Worker {
        sh,
        tree: TreeState::new(tree_id),
        gen,
        exec,
        budget,
    };
    w.emit(
        Some(NodeId::ROOT),
        EventKind::NodeCreated {
            parent: None,
            action: None,
            branch: NodeId::ROOT,
            debug_depth: 0,
        },
    );
    let result = w.search();
    w.tree.elapsed = w.budget.elapsed();
    w.emit(
        None,
        EventKind::TreeFinished {
            nodes: w.tree.len(),
            best: w.tree.best,
            elapsed: w.tree.elapsed,
        },
    );
    result.map(|()| w.tree)
}

impl Worker<'_, '_> {
    fn now(&self) -> f64 {
        self.budget.elapsed()
    }

    fn emit(&self, node: Option<NodeId>, kind: EventKind) {
        self.sh.log.emit(self.now(), self.tree.tree, node, kind);
    }

    fn flush_calls(&mut self, node: NodeId) {
        for call in self.gen.take_calls() {
            self.emit(
                Some(node),
                EventKind::ModelCall {
                    purpose: call.purpose,
                    attempts: call.attempts,
                    request: call.request,
                    response: call.response,
                },
            );
        }
    }

    fn remaining(&self) -> f64 {
        self.sh.cfg.time_budget - self.now()
    }

    fn site(&self, node: NodeId) -> CallSite {
        CallSite {
            tree: self.tree.tree,
            node,
            branch: self.tree.node(node).branch,
        }
    }

    fn search(&mut self) -> Result<(), SearchError> {
        let mut iterations = 0u64;
        loop {
            let capped = self.sh.cfg.max_iterations.is_some_and(|m| iterations >= m);
            if self.remaining() <= 0.0 || capped {
                self.emit(
                    None,
                    EventKind::BudgetExhausted {
                        elapsed: self.now(),
                        killed: None,
                    },
                );
                return Ok(());
            }
            iterations += 1;
            if let Step::Exhausted = self.iterate()? {
                return Ok(());
            }
        }
    }

    fn add_node(&mut self, parent: NodeId, action: Action) -> NodeId {
        let id = self.tree.add_child(parent, action, self.now());
        let n = self.tree.node(id);
        let kind = EventKind::NodeCreated {
            parent: Some(parent),
            action: Some(action),
            branch: n.branch,
            debug_depth: n.debug_depth,
        };
        self.emit(Some(id), kind);
        id
    }

    fn iterate(&mut self) -> Result<Step, SearchError> {
        let candidate = select_candidate(&self.tree, self.sh.cfg);
        let action = if candidate == self.tree.root() {
            Action::Draft
        } else {
            Action::Improve
        };
        let node = self.add_node(candidate, action);
        let generated = self.generate(node, action);
        self.flush_calls(node);
        if let Err(e) = generated {
            self.fail_generation(node, action, &e);
            self.finish(node);
            return Ok(Step::Continue);
        }

        let mut current = node;
        if let Step::Exhausted = self.execute(current)? {
            return Ok(self.exhausted(current));
        }
        // chained repair attempts
        while self.tree.node(current).status == NodeStatus::Buggy
            && self.tree.node(current).solution.is_some()
            && self.tree.node(current).debug_depth < self.sh.cfg.max_debug_depth
            && self.remaining() > 0.0
        {
            let attempt = self.add_node(current, Action::Debug);
            let edit = self.debug_edit(current, attempt);
            self.flush_calls(attempt);
            let (diff, analysis) = match edit {
                Ok(v) => v,
                Err(e) => {
                    let stop = !matches!(e, GenError::Diff(_));
                    self.fail_generation(attempt, Action::Debug, &e);
                    current = attempt;
                    if stop {
                        break;
                    }
                    continue;
                }
            };
            if let Step::Exhausted = self.execute(attempt)? {
                return Ok(self.exhausted(attempt));
            }
            self.distill_debug(current, attempt, &diff, &analysis);
            current = attempt;
        }
        if self.tree.node(current).status == NodeStatus::Valid {
            self.distill_solution(current);
        }
        self.finish(current);
        Ok(Step::Continue)
    }

    fn lessons(&self, category: LessonCategory) -> Vec<crate::lessons::Lesson> {
        self.sh.lessons.recent(category, self.sh.cfg.lesson_window)
    }

    /// Produces the node's repository through the generator and records citations.
    fn generate(&mut self, node: NodeId, action: Action) -> Result<(), GenError> {
        let site = self.site(node);
        let parent = self
            .tree
            .node(node)
            .parent
            .expect("generated nodes have parents");
        self.budget.charge(self.gen.call_overhead());
        let (repo, citations) = match action {
            Action::Draft => {
                let lessons = self.lessons(LessonCategory::Solution);
                let ideas = prior_ideas(&self.tree.ideas, self.sh.cfg.idea_budget_chars);
                let drafted = self.gen.draft(DraftRequest {
                    ctx: self.sh.task,
                    site,
                    lessons: &lessons,
                    prior_ideas: &ideas,
                })?;
                let repo = SolutionRepo::from_diff(MAIN_FILE, &drafted.diff)?;
                self.tree.ideas.push(drafted.idea.clone());
                self.tree.node_mut(node).idea = Some(drafted.idea);
                (repo, drafted.citations)
            }
            Action::Improve => {
                let lessons = self.lessons(LessonCategory::Solution);
                let p = self.tree.node(parent);
                let parent_repo = p.solution.clone().expect("improved nodes are valid");
                let edit = self.gen.improve(ImproveRequest {
                    ctx: self.sh.task,
                    site,
                    parent: &parent_repo,
                    summary: p.review_summary.as_deref().unwrap_or_default(),
                    output: p.output.as_deref().unwrap_or_default(),
                    lessons: &lessons,
                })?;
                (apply_diff(&parent_repo, &edit.diff)?, edit.citations)
            }
            Action::Debug => unreachable!("debug attempts go through debug_edit"),
        };
        self.tree.node_mut(node).solution = Some(repo);
        self.record_citations(node, citations);
        Ok(())
    }

    fn debug_edit(
        &mut self,
        buggy: NodeId,
        attempt: NodeId,
    ) -> Result<(DiffSet, String), GenError> {
        let site = self.site(attempt);
        let lessons = self.lessons(LessonCategory::Debug);
        self.budget.charge(self.gen.call_overhead());
        let b = self.tree.node(buggy);
        let repo = b.solution.clone().expect("debugged nodes have a solution");
        let output = b.output.clone().unwrap_or_default();
        // failed attempts keep the repository they started from
        self.tree.node_mut(attempt).solution = Some(repo.clone());
        self.tree.node_mut(attempt).output = Some(output.clone());
        let edit = self.gen.debug(DebugRequest {
            ctx: self.sh.task,
            site,
            repo: &repo,
            output: &output,
            lessons: &lessons,
        })?;
        let fixed = apply_diff(&repo, &edit.diff)?;
        self.tree.node_mut(attempt).solution = Some(fixed);
        self.tree.node_mut(attempt).output = None;
        self.record_citations(attempt, edit.citations);
        Ok((edit.diff, edit.analysis))
    }

    fn record_citations(&mut self, node: NodeId, cited: BTreeSet<LessonId>) {
        let (known, unknown): (BTreeSet<_>, BTreeSet<_>) = cited
            .into_iter()
            .partition(|id| self.sh.lessons.get(*id).is_some());
        if !unknown.is_empty() {
            self.emit(Some(node), EventKind::CitationMiss { lessons: unknown });
        }
        if !known.is_empty() {
            self.emit(
                Some(node),
                EventKind::LessonCited {
                    lessons: known.clone(),
                },
            );
        }
        self.tree.node_mut(node).cited_lessons = known;
    }

    fn fail_generation(&mut self, node: NodeId, action: Action, err: &GenError) {
        let msg = err.to_string();
        log::warn!(
            "tree {} {node}: {} failed: {msg}",
            self.tree.tree,
            action.as_str()
        );
        let n = self.tree.node_mut(node);
        n.status = NodeStatus::Buggy;
        n.error = Some(msg.clone());
        self.emit(
            Some(node),
            EventKind::GeneratorFailed {
                action,
                error: msg.clone(),
            },
        );
        self.emit(
            Some(node),
            EventKind::Reviewed {
                status: NodeStatus::Buggy,
                metric: None,
                summary: msg,
            },
        );
    }

    /// Runs and reviews a node, setting its status.
    fn execute(&mut self, node: NodeId) -> Result<Step, SearchError> {
        let limit = self.sh.cfg.limit();
        let remaining = self.remaining();
        if remaining <= 0.0 {
            let n = self.tree.node_mut(node);
            n.status = NodeStatus::Buggy;
            n.exit = Some(ExitStatus::Killed);
            n.error = Some("budget exhausted before execution".into());
            self.emit(
                Some(node),
                EventKind::Reviewed {
                    status: NodeStatus::Buggy,
                    metric: None,
                    summary: "budget exhausted before execution".into(),
                },
            );
            return Ok(Step::Exhausted);
        }
        let repo = self
            .tree
            .node(node)
            .solution
            .clone()
            .expect("executed nodes have a solution");
        let outcome = self
            .exec
            .execute(ExecRequest {
                tree: self.tree.tree,
                node,
                repo: &repo,
                limit,
                kill_after: remaining.min(limit),
            })
            .map_err(|source| SearchError::Harness {
                tree: self.tree.tree,
                source,
            })?;
        self.budget.charge(outcome.cost.t);
        self.emit(
            Some(node),
            EventKind::Executed {
                exit: outcome.exit,
                t: outcome.cost.t,
                limit: outcome.cost.limit,
                metric_line: outcome.metric_line,
            },
        );
        {
            let n = self.tree.node_mut(node);
            n.cost = Some(outcome.cost);
            n.exit = Some(outcome.exit);
            n.output = Some(outcome.output.clone());
        }
        if outcome.exit == ExitStatus::Killed {
            let n = self.tree.node_mut(node);
            n.status = NodeStatus::Buggy;
            self.emit(
                Some(node),
                EventKind::Reviewed {
                    status: NodeStatus::Buggy,
                    metric: None,
                    summary: "killed: global budget exhausted".into(),
                },
            );
            return Ok(Step::Exhausted);
        }
        let site = self.site(node);
        let review = self
            .gen
            .review_execution(self.sh.task, site, &repo, &outcome)
            .map(|r| r.normalized());
        self.flush_calls(node);
        let (status, metric, summary) = match review {
            Ok(r) if r.valid_metric && outcome.exit == ExitStatus::Success => {
                (NodeStatus::Valid, r.metric, r.summary)
            }
            Ok(r) => (NodeStatus::Buggy, None, r.summary),
            Err(e) => {
                let msg = format!("review failed: {e}");
                self.tree.node_mut(node).error = Some(msg.clone());
                (NodeStatus::Buggy, None, msg)
            }
        };
        let n = self.tree.node_mut(node);
        n.status = status;
        n.metric = metric;
        n.review_summary = Some(summary.clone());
        self.emit(
            Some(node),
            EventKind::Reviewed {
                status,
                metric,
                summary,
            },
        );
        Ok(Step::Continue)
    }

    fn exhausted(&mut self, node: NodeId) -> Step {
        let path = backpropagate(&mut self.tree, node, 0.0);
        self.emit(Some(node), EventKind::Backprop { reward: 0.0, path });
        self.emit(
            None,
            EventKind::BudgetExhausted {
                elapsed: self.now(),
                killed: Some(node),
            },
        );
        Step::Exhausted
    }

    fn oriented(&self, node: NodeId) -> Option<f64> {
        let m = self.tree.node(node).metric?;
        self.sh.metric.oriented(m).ok()
    }

    fn reward(&self, node: NodeId) -> f64 {
        let n = self.tree.node(node);
        let (Some(v), Some(cost)) = (self.oriented(node), n.cost) else {
            return 0.0;
        };
        if n.status != NodeStatus::Valid {
            return 0.0;
        }
        let history: Vec<f64> = self
            .tree
            .valid_nodes()
            .filter_map(|n| n.metric)
            .filter_map(|m| self.sh.metric.oriented(m).ok())
            .collect();
        let g = global_normalized_score(v, &history).unwrap_or(0.5);
        efficiency_reward(g, cost, self.sh.reward).unwrap_or(0.0)
    }

    /// Backpropagates the final node of an iteration and updates the incumbent.
    fn finish(&mut self, node: NodeId) {
        let reward = self.reward(node);
        let path = backpropagate(&mut self.tree, node, reward);
        self.emit(Some(node), EventKind::Backprop { reward, path });
        if self.tree.node(node).status != NodeStatus::Valid {
            return;
        }
        let oriented = self.oriented(node).expect("valid nodes have metrics");
        let incumbent = self.tree.best.and_then(|b| self.oriented(b));
        if !is_improved(oriented, incumbent) {
            self.tree.valid_since_best += 1;
            return;
        }
        self.tree.best = Some(node);
        self.tree.valid_since_best = 0;
        let n = self.tree.node(node);
        let repo = n.solution.clone().expect("valid nodes have a solution");
        let metric = n.metric.expect("valid nodes have metrics");
        let stats = repo_stats(&repo);
        let entry = BestEntry {
            tree: self.tree.tree,
            node,
            metric,
            oriented,
            repo,
        };
        let kind = |global| EventKind::BestUpdated {
            metric,
            oriented,
            global,
            loc: stats.lines_of_code,
            files: stats.file_count,
        };
        self.sh
            .best
            .offer_then(entry, |global| self.emit(Some(node), kind(global)));
    }

    fn add_lesson(&mut self, node: NodeId, title: String, body: crate::lessons::LessonBody) {
        let n = self.tree.node(node);
        let draft = LessonDraft {
            title,
            body,
            origin: Origin {
                tree: self.tree.tree,
                node,
                branch: n.branch,
            },
        };
        let category = draft.category();
        let gen = &mut *self.gen;
        let outcome = self.sh.lessons.add(draft, |existing, cand| {
            gen.review_duplicate(existing, cand)
                .map_err(|e| e.to_string())
        });
        self.flush_calls(node);
        let kind = match outcome {
            AddOutcome::Accepted(l) => EventKind::LessonAdded {
                lesson: l.id,
                category,
                title: l.title,
                origin_tree: l.origin.tree,
                origin_node: l.origin.node,
                origin_branch: l.origin.branch,
            },
            AddOutcome::Duplicate => EventKind::LessonRejected {
                category,
                reason: "duplicate".into(),
            },
            AddOutcome::Malformed => EventKind::LessonRejected {
                category,
                reason: "malformed".into(),
            },
            AddOutcome::Quarantined(why) => EventKind::LessonRejected {
                category,
                reason: format!("quarantined: {why}"),
            },
        };
        self.emit(Some(node), kind);
    }

    fn lesson_failed(&mut self, node: NodeId, category: LessonCategory, err: GenError) {
        self.flush_calls(node);
        self.emit(
            Some(node),
            EventKind::LessonRejected {
                category,
                reason: format!("distillation failed: {err}"),
            },
        );
    }

    fn distill_solution(&mut self, node: NodeId) {
        let n = self.tree.node(node);
        let new_repo = n.solution.clone().expect("valid nodes have a solution");
        let new_summary = n.review_summary.clone().unwrap_or_default();
        let new = (n.metric.expect("valid"), n.cost.map_or(0.0, |c| c.t));
        let best = self.tree.best.map(|b| {
            let b = self.tree.node(b);
            (
                b.solution.clone().expect("best is valid"),
                b.metric.expect("best is valid"),
                b.cost.map_or(0.0, |c| c.t),
                b.review_summary.clone().unwrap_or_default(),
            )
        });
        let site = self.site(node);
        let distilled = self.gen.distill_solution_lesson(SolutionLessonRequest {
            ctx: self.sh.task,
            site,
            best: best
                .as_ref()
                .map(|(repo, metric, t, summary)| SolutionOutcome {
                    repo,
                    metric: *metric,
                    exec_time: *t,
                    summary,
                }),
            new: SolutionOutcome {
                repo: &new_repo,
                metric: new.0,
                exec_time: new.1,
                summary: &new_summary,
            },
        });
        match distilled {
            Ok(d) => {
                self.flush_calls(node);
                self.add_lesson(node, d.title, d.body);
            }
            Err(e) => self.lesson_failed(node, LessonCategory::Solution, e),
        }
    }

    fn distill_debug(&mut self, before: NodeId, after: NodeId, diff: &DiffSet, analysis: &str) {
        let b = self.tree.node(before);
        let a = self.tree.node(after);
        let before_repo = b.solution.clone().expect("debugged nodes have a solution");
        let before_output = b.output.clone().unwrap_or_default();
        let after_output = a.output.clone().unwrap_or_default();
        let fixed = a.status == NodeStatus::Valid;
        let site = self.site(after);
        let distilled = self.gen.distill_debug_lesson(DebugLessonRequest {
            ctx: self.sh.task,
            site,
            before: &before_repo,
            before_output: &before_output,
            error_analysis: analysis,
            diff,
            after_output: &after_output,
            fixed,
        });
        match distilled {
            Ok(d) => {
                self.flush_calls(after);
                self.add_lesson(after, d.title, d.body);
            }
            Err(e) => self.lesson_failed(after, LessonCategory::Debug, e),
        }
    }
}

//! Contribution handling: plan graph edits from a natural-language request,
//! execute them one at a time, repair failing ops from the executor's error
//! message and replan when repair keeps failing.
//!
//! The control flow is:
//!
//! ```text
//! depth ← 0
//! while depth < max_depth:
//!     ops ← plan(input, graph, history)
//!     for op in ops:
//!         repeat up to `attempts` times:
//!             execute op; on success commit and move on
//!             otherwise op ← self_correct(op, error, history)
//!         if every attempt failed:
//!             history += error and op; depth += 1; restart planning
//!     return summary of applied ops
//! return "Max attempts reached."
//! ```
//!
//! Ops that succeeded before a replan stay applied.

mod language;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::graph::{find_anchor, AppliedOp, GraphOp, KnowledgeGraph, Origin};
use crate::history::{ChatHistory, Role};
use crate::prompts::{self, PromptId};
use crate::provider::{CompletionRequest, LanguageModel, ProviderError, Stage};

pub use language::{parse_op, parse_plan, ParseError, Plan, PlanParseError};

pub const MAX_ATTEMPTS_MESSAGE: &str = "Max attempts reached.";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MapError {
    #[error("planning failed: {0}")]
    PlanningFailure(String),
    #[error("{stage} failed: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapManagerConfig {
    /// Executions per op before giving up on it.
    pub attempts: usize,
    /// Plan cycles before the terminal message.
    pub max_depth: usize,
    /// When set, edge labels outside this list are rejected by the executor.
    pub relations: Option<BTreeSet<String>>,
}

impl Default for MapManagerConfig {
    fn default() -> Self {
        Self {
            attempts: 5,
            max_depth: 3,
            relations: None,
        }
    }
}

/// Makes the executor fail ops whose text contains a pattern, a set number
/// of times. Used to exercise the repair and replan paths.
#[derive(Debug, Default)]
pub struct FailureInjector {
    rules: Mutex<Vec<(String, usize, String)>>,
}

impl FailureInjector {
    pub fn new() -> Self {
        Self::default()
    }

    /// The next `times` executions of an op containing `pattern` fail with
    /// `message`.
    pub fn fail(&self, pattern: impl Into<String>, times: usize, message: impl Into<String>) {
        self.rules
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push((pattern.into(), times, message.into()));
    }

    fn check(&self, op_text: &str) -> Option<String> {
        let mut rules = self.rules.lock().unwrap_or_else(|p| p.into_inner());
        let rule = rules
            .iter_mut()
            .find(|(pattern, left, _)| *left > 0 && op_text.contains(pattern.as_str()))?;
        rule.1 -= 1;
        Some(rule.2.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OpStatus {
    Succeeded,
    Corrected { attempts: usize },
    Failed { attempts: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub cycle: usize,
    /// The op as last executed.
    pub op: String,
    #[serde(flatten)]
    pub status: OpStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub records: Vec<OpRecord>,
    pub applied: Vec<AppliedOp>,
    pub revision: u64,
    /// Plan cycles started, counting the first.
    pub depth_used: usize,
    pub completed: bool,
    /// Confirmation listing applied ops, or the terminal message.
    pub message: String,
}

/// Append-only record of everything the executor did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum OpLogEntry {
    Started { input: String, revision: u64 },
    Planned { cycle: usize, ops: Vec<String>, rationale: String },
    PlanningFailed { cycle: usize, error: String },
    Attempt { cycle: usize, attempt: usize, op: String, error: Option<String> },
    Corrected { cycle: usize, from: String, to: String },
    Replan { cycle: usize, error: String },
    Finished { revision: u64, depth_used: usize, completed: bool, message: String },
    /// An op posted directly by a client, outside planning.
    Direct { op: String, error: Option<String> },
}

pub type OpLog = Vec<OpLogEntry>;

fn provider(stage: Stage) -> impl FnOnce(ProviderError) -> MapError {
    move |source| MapError::Provider { stage, source }
}

/// Lists the ops applied so far.
pub fn format_response(applied: &[AppliedOp]) -> String {
    if applied.is_empty() {
        return "No changes were needed.".to_string();
    }
    let mut out = format!("Applied {} operation(s):", applied.len());
    for op in applied {
        let _ = write!(out, "\n- {}", op.summary);
    }
    out
}

fn anchors(graph: &KnowledgeGraph, input: &str) -> String {
    let hits: Vec<String> = find_anchor(graph, input)
        .into_iter()
        .take(5)
        .filter_map(|hit| graph.node(hit.node).map(|n| format!("{} {:?}", n.id, n.title)))
        .collect();
    if hits.is_empty() {
        "(none)".to_string()
    } else {
        hits.join("; ")
    }
}

/// First line of a correction that looks like an op.
fn correction_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with("```") && !l.starts_with('#'))
        .unwrap_or("")
        .to_string()
}

/// The executor: plan, run, repair, replan.
pub struct MapManager<'a> {
    pub model: &'a dyn LanguageModel,
    pub config: &'a MapManagerConfig,
    pub injector: Option<&'a FailureInjector>,
}

impl<'a> MapManager<'a> {
    pub fn new(model: &'a dyn LanguageModel, config: &'a MapManagerConfig) -> Self {
        Self {
            model,
            config,
            injector: None,
        }
    }

    pub fn with_injector(mut self, injector: &'a FailureInjector) -> Self {
        self.injector = Some(injector);
        self
    }

    /// Asks the planner for ops. An unparseable answer is re-asked once with
    /// the parse error attached.
    pub fn plan(&self, input: &str, graph: &KnowledgeGraph, history: &ChatHistory) -> Result<Plan, MapError> {
        let graph_text = graph.outline();
        let anchor_text = anchors(graph, input);
        let history_text = history.render();
        let prompt = prompts::render(
            PromptId::PlanOps,
            &[
                ("input", input),
                ("graph", &graph_text),
                ("anchors", &anchor_text),
                ("history", &history_text),
            ],
        )
        .expect("plan_ops placeholders");
        let mut request = CompletionRequest::new(PromptId::PlanOps, input, prompt.clone()).planner();
        let mut last_error = String::new();
        for ask in 0..2 {
            if ask == 1 {
                request.prompt = format!(
                    "{prompt}\n\nYour previous answer could not be parsed ({last_error}). Output only operation lines."
                );
            }
            let out = self.model.complete(&request).map_err(provider(Stage::Plan))?;
            match parse_plan(&out) {
                Ok(plan) if plan.ops.is_empty() => {
                    return Err(MapError::PlanningFailure("the planner proposed no operations".into()))
                }
                Ok(plan) => return Ok(plan),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(MapError::PlanningFailure(format!("unparseable plan: {last_error}")))
    }

    /// Asks for a repaired version of a failing op. Returns the raw line; it
    /// is parsed when executed.
    pub fn self_correct(
        &self,
        op: &str,
        error: &str,
        graph: &KnowledgeGraph,
        history: &ChatHistory,
    ) -> Result<String, MapError> {
        let graph_text = graph.outline();
        let history_text = history.render();
        let prompt = prompts::render(
            PromptId::SelfCorrect,
            &[("op", op), ("error", error), ("graph", &graph_text), ("history", &history_text)],
        )
        .expect("self_correct placeholders");
        let out = self
            .model
            .complete(&CompletionRequest::new(PromptId::SelfCorrect, op, prompt).planner())
            .map_err(provider(Stage::SelfCorrect))?;
        Ok(correction_line(&out))
    }

    fn check_relation(&self, op: &GraphOp) -> Result<(), String> {
        let Some(known) = &self.config.relations else {
            return Ok(());
        };
        let label = match op {
            GraphOp::AddEdge { label, .. } => Some(label.as_str()),
            GraphOp::AddNode { label, .. } => label.as_deref(),
            _ => None,
        };
        match label {
            Some(l) if !known.contains(l.trim()) => {
                let list: Vec<&str> = known.iter().map(String::as_str).collect();
                Err(format!(
                    "unrecognized relationship '{}'; known relationships: {}",
                    l.trim(),
                    list.join(", ")
                ))
            }
            _ => Ok(()),
        }
    }

    /// Runs one op line against the graph. Failure leaves the graph as it was.
    fn execute_one(&self, text: &str, graph: &mut KnowledgeGraph, origin: Origin) -> Result<AppliedOp, String> {
        let op = parse_op(text).map_err(|e| format!("syntax error: {e}"))?;
        self.check_relation(&op)?;
        if let Some(message) = self.injector.and_then(|i| i.check(text)) {
            return Err(message);
        }
        op.apply(graph, origin).map_err(|e| e.to_string())
    }

    /// Executes `plan`, repairing and replanning as needed. `replan` produces
    /// a fresh plan from the current graph and history.
    pub fn execute(
        &self,
        plan: Plan,
        graph: &mut KnowledgeGraph,
        history: &mut ChatHistory,
        origin: Origin,
        log: &mut OpLog,
        replan: &mut dyn FnMut(&KnowledgeGraph, &ChatHistory) -> Result<Plan, MapError>,
    ) -> Result<ExecutionOutcome, MapError> {
        let attempts = self.config.attempts.max(1);
        let max_depth = self.config.max_depth.max(1);
        let mut records = Vec::new();
        let mut applied = Vec::new();
        let mut plan = Some(plan);
        let mut depth = 0;

        while depth < max_depth {
            let cycle = depth + 1;
            let current_plan = match plan.take() {
                Some(p) => p,
                None => match replan(graph, history) {
                    Ok(p) => p,
                    Err(e) => {
                        log.push(OpLogEntry::PlanningFailed {
                            cycle,
                            error: e.to_string(),
                        });
                        return Err(e);
                    }
                },
            };
            log.push(OpLogEntry::Planned {
                cycle,
                ops: current_plan.ops.iter().map(ToString::to_string).collect(),
                rationale: current_plan.rationale.clone(),
            });

            let mut failed = None;
            for op in &current_plan.ops {
                let mut text = op.to_string();
                let mut done = false;
                let mut last_error = String::new();
                let mut last_text = text.clone();
                for attempt in 1..=attempts {
                    match self.execute_one(&text, graph, origin) {
                        Ok(result) => {
                            log.push(OpLogEntry::Attempt {
                                cycle,
                                attempt,
                                op: text.clone(),
                                error: None,
                            });
                            let status = if attempt == 1 {
                                OpStatus::Succeeded
                            } else {
                                OpStatus::Corrected { attempts: attempt }
                            };
                            records.push(OpRecord {
                                cycle,
                                op: text.clone(),
                                status,
                            });
                            applied.push(result);
                            done = true;
                            break;
                        }
                        Err(error) => {
                            log.push(OpLogEntry::Attempt {
                                cycle,
                                attempt,
                                op: text.clone(),
                                error: Some(error.clone()),
                            });
                            let corrected = self.self_correct(&text, &error, graph, history)?;
                            log.push(OpLogEntry::Corrected {
                                cycle,
                                from: text.clone(),
                                to: corrected.clone(),
                            });
                            last_error = error;
                            last_text = std::mem::replace(&mut text, corrected);
                        }
                    }
                }
                if !done {
                    records.push(OpRecord {
                        cycle,
                        op: last_text.clone(),
                        status: OpStatus::Failed { attempts },
                    });
                    failed = Some(format!("Operation {last_text} failed: {last_error}"));
                    break;
                }
            }

            match failed {
                None => {
                    let message = format_response(&applied);
                    log.push(OpLogEntry::Finished {
                        revision: graph.revision(),
                        depth_used: cycle,
                        completed: true,
                        message: message.clone(),
                    });
                    return Ok(ExecutionOutcome {
                        records,
                        applied,
                        revision: graph.revision(),
                        depth_used: cycle,
                        completed: true,
                        message,
                    });
                }
                Some(report) => {
                    history.push(Role::System, report.clone());
                    log.push(OpLogEntry::Replan { cycle, error: report });
                    depth += 1;
                }
            }
        }

        log.push(OpLogEntry::Finished {
            revision: graph.revision(),
            depth_used: max_depth,
            completed: false,
            message: MAX_ATTEMPTS_MESSAGE.into(),
        });
        Ok(ExecutionOutcome {
            records,
            applied,
            revision: graph.revision(),
            depth_used: max_depth,
            completed: false,
            message: MAX_ATTEMPTS_MESSAGE.into(),
        })
    }

    /// Plans and executes a user contribution. New nodes are tagged
    /// user-contributed.
    pub fn handle_contribution(
        &self,
        input: &str,
        graph: &mut KnowledgeGraph,
        history: &mut ChatHistory,
        log: &mut OpLog,
    ) -> Result<ExecutionOutcome, MapError> {
        log.push(OpLogEntry::Started {
            input: input.to_string(),
            revision: graph.revision(),
        });
        let plan = match self.plan(input, graph, history) {
            Ok(plan) => plan,
            Err(e) => {
                log.push(OpLogEntry::PlanningFailed {
                    cycle: 1,
                    error: e.to_string(),
                });
                return Err(e);
            }
        };
        let mut replan = |g: &KnowledgeGraph, h: &ChatHistory| self.plan(input, g, h);
        self.execute(plan, graph, history, Origin::UserContributed, log, &mut replan)
    }
}

/// Highest attempt number of any op and number of plan cycles recorded in
/// one request's log entries.
pub fn log_bounds(entries: &[OpLogEntry]) -> (usize, usize) {
    let attempts = entries
        .iter()
        .filter_map(|e| match e {
            OpLogEntry::Attempt { attempt, .. } => Some(*attempt),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let cycles = entries
        .iter()
        .filter(|e| matches!(e, OpLogEntry::Planned { .. }))
        .count();
    (attempts, cycles)
}

//! Offline replay of labeled corpora through the pipeline, producing routing
//! and editing metric tables.
//!
//! Routing corpus: one record per line, tab-separated
//! `input <TAB> focus <TAB> category`, where focus may be empty. Lines
//! starting with `#` and blank lines are ignored.
//!
//! Edit corpus: tab-separated `input <TAB> expected`, where `expected` is
//! the op lines the edit should apply, joined with ` || ` (may be empty to
//! only measure execution success).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::graph::KnowledgeGraph;
use crate::history::ChatHistory;
use crate::map_manager::{log_bounds, MapManager, OpLog};
use crate::oracle::{classify, Category};
use crate::provider::LanguageModel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("corpus line {line}: {message}")]
pub struct CorpusError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoutingCase {
    pub input: String,
    pub focus: Option<String>,
    pub expected: Category,
}

pub fn parse_routing_corpus(text: &str) -> Result<Vec<RoutingCase>, CorpusError> {
    let mut cases = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let error = |message: String| CorpusError { line: index + 1, message };
        if fields.len() != 3 {
            return Err(error(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let expected = fields[2].parse::<Category>().map_err(error)?;
        let focus = Some(fields[1].trim()).filter(|f| !f.is_empty()).map(str::to_string);
        cases.push(RoutingCase {
            input: fields[0].trim().to_string(),
            focus,
            expected,
        });
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub category: Category,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingOutcome {
    pub input: String,
    pub expected: Category,
    pub predicted: Option<Category>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingReport {
    pub outcomes: Vec<RoutingOutcome>,
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl RoutingReport {
    pub fn from_outcomes(outcomes: Vec<RoutingOutcome>) -> Self {
        let correct = outcomes.iter().filter(|o| o.predicted == Some(o.expected)).count();
        let classes = Category::ALL
            .iter()
            .map(|&category| {
                let tp = outcomes
                    .iter()
                    .filter(|o| o.expected == category && o.predicted == Some(category))
                    .count();
                let predicted = outcomes.iter().filter(|o| o.predicted == Some(category)).count();
                let support = outcomes.iter().filter(|o| o.expected == category).count();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    category,
                    support,
                    precision,
                    recall,
                    f1,
                }
            })
            .collect();
        Self {
            accuracy: ratio(correct, outcomes.len()),
            outcomes,
            classes,
        }
    }

    /// Markdown table: one row per class plus overall accuracy.
    pub fn table(&self) -> String {
        let mut out = String::from("| Category | Support | Precision | Recall | F1 |\n|---|---|---|---|---|\n");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "| {} | {} | {:.1}% | {:.1}% | {:.1}% |",
                c.category,
                c.support,
                c.precision * 100.0,
                c.recall * 100.0,
                c.f1 * 100.0
            );
        }
        let _ = write!(
            out,
            "\nOverall accuracy: {:.1}% ({} items)",
            self.accuracy * 100.0,
            self.outcomes.len()
        );
        out
    }
}

/// Classifies every case with an empty history.
pub fn replay_routing(model: &dyn LanguageModel, cases: &[RoutingCase]) -> RoutingReport {
    let history = ChatHistory::default();
    let outcomes = cases
        .iter()
        .map(|case| {
            let input = match &case.focus {
                Some(focus) => format!("{} (about the node '{focus}')", case.input),
                None => case.input.clone(),
            };
            match classify(model, &input, &history) {
                Ok(intent) => RoutingOutcome {
                    input: case.input.clone(),
                    expected: case.expected,
                    predicted: Some(intent.category),
                    error: None,
                },
                Err(e) => RoutingOutcome {
                    input: case.input.clone(),
                    expected: case.expected,
                    predicted: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    RoutingReport::from_outcomes(outcomes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EditCase {
    pub input: String,
    pub expected: Vec<String>,
}

pub fn parse_edit_corpus(text: &str) -> Result<Vec<EditCase>, CorpusError> {
    let mut cases = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (input, expected) = line.split_once('\t').unwrap_or((line, ""));
        if input.trim().is_empty() {
            return Err(CorpusError {
                line: index + 1,
                message: "empty input".into(),
            });
        }
        cases.push(EditCase {
            input: input.trim().to_string(),
            expected: expected
                .split(" || ")
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        });
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditOutcome {
    pub input: String,
    pub completed: bool,
    pub fully_correct: Option<bool>,
    pub max_attempts: usize,
    pub plan_cycles: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditReport {
    pub outcomes: Vec<EditOutcome>,
    pub execution_success: f64,
    pub fully_correct: Option<f64>,
}

impl EditReport {
    pub fn table(&self) -> String {
        let mut out = String::from("| Metric | Value |\n|---|---|\n");
        let _ = writeln!(out, "| Commands | {} |", self.outcomes.len());
        let _ = writeln!(out, "| Execution success | {:.1}% |", self.execution_success * 100.0);
        if let Some(fc) = self.fully_correct {
            let _ = writeln!(out, "| Fully correct | {:.1}% |", fc * 100.0);
        }
        let corrected = self.outcomes.iter().filter(|o| o.max_attempts > 1).count();
        let replanned = self.outcomes.iter().filter(|o| o.plan_cycles > 1).count();
        let _ = writeln!(out, "| Needed self-correction | {corrected} |");
        let _ = write!(out, "| Needed replanning | {replanned} |");
        out
    }
}

/// Runs edit commands in order against one evolving graph.
pub fn replay_edits(manager: &MapManager<'_>, graph: &mut KnowledgeGraph, cases: &[EditCase]) -> EditReport {
    let mut history = ChatHistory::default();
    let mut outcomes = Vec::with_capacity(cases.len());
    for case in cases {
        let mut log = OpLog::new();
        let result = manager.handle_contribution(&case.input, graph, &mut history, &mut log);
        let (max_attempts, plan_cycles) = log_bounds(&log);
        let outcome = match result {
            Ok(outcome) => {
                let applied: Vec<String> = outcome.applied.iter().map(|a| a.op.to_string()).collect();
                EditOutcome {
                    input: case.input.clone(),
                    completed: outcome.completed,
                    fully_correct: (!case.expected.is_empty()).then(|| outcome.completed && applied == case.expected),
                    max_attempts,
                    plan_cycles,
                    message: outcome.message,
                }
            }
            Err(e) => EditOutcome {
                input: case.input.clone(),
                completed: false,
                fully_correct: (!case.expected.is_empty()).then_some(false),
                max_attempts,
                plan_cycles,
                message: e.to_string(),
            },
        };
        outcomes.push(outcome);
    }
    let success = outcomes.iter().filter(|o| o.completed).count();
    let judged: Vec<bool> = outcomes.iter().filter_map(|o| o.fully_correct).collect();
    let fully_correct = (!judged.is_empty()).then(|| ratio(judged.iter().filter(|b| **b).count(), judged.len()));
    EditReport {
        execution_success: ratio(success, outcomes.len()),
        fully_correct,
        outcomes,
    }
}

/// Confusion counts keyed by (expected, predicted).
pub fn confusion(report: &RoutingReport) -> BTreeMap<(Category, Option<Category>), usize> {
    let mut out = BTreeMap::new();
    for o in &report.outcomes {
        *out.entry((o.expected, o.predicted)).or_default() += 1;
    }
    out
}

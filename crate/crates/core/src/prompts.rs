//! Prompt catalog: named templates with `{placeholder}` slots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const CATALOG_SOURCE: &str = include_str!("../prompts/catalog.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    ParseQuery,
    UpdateGraph,
    QueryGraph,
    RefineQuery,
    QueryKnowledgeBase,
    GenerateSuggestions,
    RewriteFinalOutput,
    Summarize,
    GradeChunks,
    PlanOps,
    SelfCorrect,
}

impl PromptId {
    pub const ALL: [PromptId; 11] = [
        PromptId::ParseQuery,
        PromptId::UpdateGraph,
        PromptId::QueryGraph,
        PromptId::RefineQuery,
        PromptId::QueryKnowledgeBase,
        PromptId::GenerateSuggestions,
        PromptId::RewriteFinalOutput,
        PromptId::Summarize,
        PromptId::GradeChunks,
        PromptId::PlanOps,
        PromptId::SelfCorrect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::ParseQuery => "parse_query",
            PromptId::UpdateGraph => "update_graph",
            PromptId::QueryGraph => "query_graph",
            PromptId::RefineQuery => "refine_query",
            PromptId::QueryKnowledgeBase => "query_knowledge_base",
            PromptId::GenerateSuggestions => "generate_suggestions",
            PromptId::RewriteFinalOutput => "rewrite_final_output",
            PromptId::Summarize => "summarize",
            PromptId::GradeChunks => "grade_chunks",
            PromptId::PlanOps => "plan_ops",
            PromptId::SelfCorrect => "self_correct",
        }
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PromptError::UnknownPrompt(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt '{0}'")]
    UnknownPrompt(String),
    #[error("prompt '{prompt}' has no value for placeholder '{name}'")]
    Unfilled { prompt: PromptId, name: String },
    #[error("prompt '{prompt}' has no placeholder '{name}'")]
    UnknownPlaceholder { prompt: PromptId, name: String },
}

#[derive(Debug, Deserialize)]
struct Entry {
    template: String,
    #[serde(default)]
    format: Option<String>,
}

fn catalog() -> &'static BTreeMap<String, Entry> {
    static CATALOG: OnceLock<BTreeMap<String, Entry>> = OnceLock::new();
    CATALOG.get_or_init(|| toml::from_str(CATALOG_SOURCE).expect("bundled prompt catalog is valid TOML"))
}

/// The instruction part of a prompt, without the output-format addendum.
pub fn template(id: PromptId) -> &'static str {
    &catalog()[id.as_str()].template
}

fn full_text(id: PromptId) -> String {
    let entry = &catalog()[id.as_str()];
    match &entry.format {
        Some(format) => format!("{}\n\n{}", entry.template, format),
        None => entry.template.clone(),
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("{{") {
            out.push(Piece::Text("{"));
            rest = after;
        } else if let Some(after) = rest.strip_prefix("}}") {
            out.push(Piece::Text("}"));
            rest = after;
        } else if rest.starts_with('{') {
            match rest.find('}') {
                Some(end) if rest[1..end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                    out.push(Piece::Slot(&rest[1..end]));
                    rest = &rest[end + 1..];
                }
                _ => {
                    out.push(Piece::Text("{"));
                    rest = &rest[1..];
                }
            }
        } else {
            let end = rest
                .find(['{', '}'])
                .map(|i| if i == 0 { 1 } else { i })
                .unwrap_or(rest.len());
            out.push(Piece::Text(&rest[..end]));
            rest = &rest[end..];
        }
    }
    out
}

/// Placeholder names used by a prompt, template and format together.
pub fn placeholders(id: PromptId) -> BTreeSet<String> {
    pieces(&full_text(id))
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(name) => Some(name.to_string()),
            Piece::Text(_) => None,
        })
        .collect()
}

/// Fills every placeholder. Each placeholder must receive a value and every
/// value must name a placeholder.
pub fn render(id: PromptId, values: &[(&str, &str)]) -> Result<String, PromptError> {
    render_text(id, &full_text(id), values)
}

/// Like [`render`], but first drops every line that mentions `{omit}`; used
/// for optional instructions such as the node note of the final rewrite.
pub fn render_omitting(id: PromptId, omit: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let marker = format!("{{{omit}}}");
    let text: Vec<&str> = full_text_lines(id)
        .into_iter()
        .filter(|line| !line.contains(&marker))
        .collect();
    render_text(id, &text.join("\n"), values)
}

fn full_text_lines(id: PromptId) -> Vec<&'static str> {
    let entry = &catalog()[id.as_str()];
    let mut lines: Vec<&'static str> = entry.template.lines().collect();
    if let Some(format) = &entry.format {
        lines.push("");
        lines.extend(format.lines());
    }
    lines
}

fn render_text(id: PromptId, text: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let parts = pieces(text);
    let used: BTreeSet<&str> = parts
        .iter()
        .filter_map(|p| match p {
            Piece::Slot(name) => Some(*name),
            Piece::Text(_) => None,
        })
        .collect();
    if let Some((name, _)) = values.iter().find(|(name, _)| !used.contains(name)) {
        return Err(PromptError::UnknownPlaceholder {
            prompt: id,
            name: name.to_string(),
        });
    }
    let mut out = String::with_capacity(text.len());
    for part in parts {
        match part {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => {
                let value = values
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::Unfilled {
                        prompt: id,
                        name: name.to_string(),
                    })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

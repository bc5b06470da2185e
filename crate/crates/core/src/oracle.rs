//! Intent routing and the steps around an answer: folding it into the
//! graph, suggesting expansions and formatting the chat reply.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::{find_anchor, AppliedOp, GraphOp, KnowledgeGraph, NodeId, Origin};
use crate::history::ChatHistory;
use crate::map_manager::{parse_plan, MapError, MapManager, OpLog, OpLogEntry, Plan};
use crate::prompts::{self, PromptId};
use crate::provider::{CompletionRequest, LanguageModel, ProviderError, Stage};
use crate::retriever::SourceRef;
use crate::text::{normalize_title, word_count};

pub const MAX_SUGGESTIONS: usize = 5;
pub const ORPHAN_LABEL: &str = "includes";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("input is empty")]
    EmptyInput,
    #[error("could not read the classification: {0}")]
    UnparseableClassification(String),
    #[error("{stage} failed: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
}

impl From<MapError> for OracleError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Provider { stage, source } => OracleError::Provider { stage, source },
            MapError::PlanningFailure(msg) => OracleError::Provider {
                stage: Stage::Integrate,
                source: ProviderError::BadResponse(msg),
            },
        }
    }
}

fn provider(stage: Stage) -> impl FnOnce(ProviderError) -> OracleError {
    move |source| OracleError::Provider { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Search,
    Edit,
    Expansion,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Search, Category::Edit, Category::Expansion];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Search => "search",
            Category::Edit => "edit",
            Category::Expansion => "expansion",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().trim_matches(|c| c == '"' || c == '\'').to_lowercase().as_str() {
            "search" => Ok(Category::Search),
            "edit" => Ok(Category::Edit),
            "expansion" => Ok(Category::Expansion),
            other => Err(format!("unknown category '{other}'")),
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub category: Category,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub topic: String,
    pub description: String,
    pub relationship: String,
}

/// The query text used for expansion requests about `topic`.
pub fn expansion_query(topic: &str) -> String {
    format!("What are the sub-topics covered in the document related to '{topic}'?")
}

const EXPANSION_PREFIX: &str = "What are the sub-topics covered in the document related to";

const EXPANSION_LEADS: &[&str] = &[
    "tell me more about",
    "tell me about",
    "more about",
    "elaborate on",
    "expand on",
    "expand",
    "explain",
    "go deeper into",
    "dig into",
];

const EXPANSION_TAILS: &[&str] = &["in more detail", "in detail", "further", "more"];

/// Pulls the topic out of an expansion request ("Tell me more about X").
fn expansion_topic(text: &str) -> String {
    let mut topic = text.trim().trim_end_matches(['?', '.', '!']).trim().to_string();
    let lower = topic.to_lowercase();
    if let Some(lead) = EXPANSION_LEADS.iter().find(|l| lower.starts_with(*l)) {
        topic = topic[lead.len()..].trim().to_string();
    }
    let lower = topic.to_lowercase();
    if let Some(tail) = EXPANSION_TAILS.iter().find(|t| lower.ends_with(*t)) {
        topic = topic[..topic.len() - tail.len()].trim().to_string();
    }
    topic.trim_matches(|c| c == '\'' || c == '"').trim().to_string()
}

fn coerce_expansion(content: &str, input: &str) -> String {
    if content.trim_start().starts_with(EXPANSION_PREFIX) {
        return content.trim().to_string();
    }
    let from_content = expansion_topic(content);
    let topic = if from_content.is_empty() {
        expansion_topic(input)
    } else {
        from_content
    };
    expansion_query(&topic)
}

fn parse_classification(text: &str) -> Result<(Category, String), String> {
    let mut category = None;
    let mut content = None;
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        let Some((key, value)) = line.split_once(':') else { continue };
        let key = key.trim().trim_matches('*').to_lowercase();
        let value = value.trim().trim_matches('*').trim();
        if key.ends_with("category") && category.is_none() {
            category = Some(value.parse::<Category>()?);
        } else if key.ends_with("content") && content.is_none() {
            content = Some(value.trim_matches('"').trim().to_string());
        }
    }
    match (category, content) {
        (Some(c), Some(t)) if !t.is_empty() => Ok((c, t)),
        (None, _) => Err("missing 'category:' line".into()),
        _ => Err("missing 'content:' line".into()),
    }
}

/// Routes `input` into one of the three categories. A reply that does not
/// have the two-line shape is re-asked once.
pub fn classify(model: &dyn LanguageModel, input: &str, history: &ChatHistory) -> Result<Intent, OracleError> {
    let input = input.trim();
    if input.is_empty() {
        return Err(OracleError::EmptyInput);
    }
    let history_text = history.render();
    let prompt = prompts::render(PromptId::ParseQuery, &[("query", input), ("chat_history", &history_text)])
        .expect("parse_query placeholders");
    let mut request = CompletionRequest::new(PromptId::ParseQuery, input, prompt.clone()).planner();
    let mut problem = String::new();
    for ask in 0..2 {
        if ask == 1 {
            request.prompt = format!(
                "{prompt}\n\nYour previous answer could not be read ({problem}). Answer with the two lines only."
            );
        }
        let out = model.complete(&request).map_err(provider(Stage::Classify))?;
        match parse_classification(&out) {
            Ok((category, content)) => {
                let content = match category {
                    Category::Expansion => coerce_expansion(&content, input),
                    _ => content,
                };
                return Ok(Intent { category, content });
            }
            Err(e) => problem = e,
        }
    }
    Err(OracleError::UnparseableClassification(problem))
}

/// Exact (case-insensitive) title match, else the top anchor hit when one
/// title contains the other.
fn existing_match(graph: &KnowledgeGraph, title: &str) -> Option<NodeId> {
    if let Some(id) = graph.nodes_titled(title).first() {
        return Some(*id);
    }
    let wanted = normalize_title(title);
    if wanted.is_empty() {
        return None;
    }
    let top = find_anchor(graph, title).into_iter().next()?;
    let existing = normalize_title(&graph.node(top.node)?.title);
    (existing.contains(&wanted) || wanted.contains(&existing)).then_some(top.node)
}

/// Filters a proposed update: keeps only additions, turns key points that
/// already exist into links to the existing node, and hangs parentless new
/// nodes under `focus`.
fn dedup_plan(graph: &KnowledgeGraph, plan: Plan, focus: Option<NodeId>) -> Plan {
    let mut renamed: BTreeMap<String, String> = BTreeMap::new();
    let mut new_titles: BTreeSet<String> = BTreeSet::new();
    let mut links: BTreeSet<(String, String)> = BTreeSet::new();
    let mut ops = Vec::new();
    let reference = |renamed: &BTreeMap<String, String>, r: &str| {
        renamed.get(&normalize_title(r)).cloned().unwrap_or_else(|| r.to_string())
    };
    let link_exists = |parent: &str, child: &str| {
        let p = crate::graph::resolve(graph, parent).ok();
        let c = crate::graph::resolve(graph, child).ok();
        matches!((p, c), (Some(p), Some(c)) if graph.edge_between(p, c).is_some() || p == c)
    };

    for op in plan.ops {
        match op {
            GraphOp::AddNode { title, detail, parent, label } => {
                let key = normalize_title(&title);
                if key.is_empty() || new_titles.contains(&key) {
                    continue;
                }
                let parent = parent
                    .map(|p| reference(&renamed, &p))
                    .or_else(|| focus.map(|f| f.to_string()));
                let label = match (&label, &parent) {
                    (Some(l), Some(_)) => Some(l.clone()),
                    (None, Some(_)) => Some(ORPHAN_LABEL.to_string()),
                    _ => None,
                };
                if let Some(existing) = existing_match(graph, &title) {
                    renamed.insert(key, existing.to_string());
                    if let Some(parent) = parent {
                        let child = existing.to_string();
                        if !link_exists(&parent, &child) && links.insert((normalize_title(&parent), child.clone())) {
                            ops.push(GraphOp::AddEdge {
                                parent,
                                child,
                                label: label.unwrap_or_else(|| ORPHAN_LABEL.to_string()),
                            });
                        }
                    }
                    continue;
                }
                new_titles.insert(key);
                ops.push(GraphOp::AddNode { title, detail, parent, label });
            }
            GraphOp::AddEdge { parent, child, label } => {
                let parent = reference(&renamed, &parent);
                let child = reference(&renamed, &child);
                if link_exists(&parent, &child)
                    || !links.insert((normalize_title(&parent), normalize_title(&child)))
                {
                    continue;
                }
                ops.push(GraphOp::AddEdge { parent, child, label });
            }
            _ => {}
        }
    }
    Plan {
        ops,
        rationale: plan.rationale,
    }
}

fn propose_update(
    model: &dyn LanguageModel,
    graph: &KnowledgeGraph,
    question: &str,
    answer: &str,
    focus: Option<NodeId>,
) -> Result<Plan, OracleError> {
    let graph_text = graph.outline();
    let focus_text = focus
        .and_then(|f| graph.node(f))
        .map(|n| format!("New key points belong under the focused node {} {:?}.", n.id, n.title));
    let values = [("query", question), ("response", answer), ("graph", graph_text.as_str())];
    let prompt = match &focus_text {
        Some(text) => {
            let mut all = values.to_vec();
            all.push(("focus", text));
            prompts::render(PromptId::UpdateGraph, &all)
        }
        None => prompts::render_omitting(PromptId::UpdateGraph, "focus", &values),
    }
    .expect("update_graph placeholders");
    let out = model
        .complete(&CompletionRequest::new(PromptId::UpdateGraph, question, prompt).planner())
        .map_err(provider(Stage::Integrate))?;
    // Unreadable lines are skipped rather than failing the whole answer.
    let mut ops = Vec::new();
    for line in out.lines() {
        if let Ok(plan) = parse_plan(line) {
            ops.extend(plan.ops);
        }
    }
    Ok(dedup_plan(graph, Plan { ops, rationale: String::new() }, focus))
}

/// Folds an answer into the graph as new document-derived nodes and links.
/// Returns the ops that were applied.
pub fn integrate_answer(
    manager: &MapManager<'_>,
    graph: &mut KnowledgeGraph,
    history: &mut ChatHistory,
    log: &mut OpLog,
    question: &str,
    answer: &str,
    focus: Option<NodeId>,
) -> Result<Vec<AppliedOp>, OracleError> {
    if answer.trim().is_empty() {
        return Ok(Vec::new());
    }
    let model = manager.model;
    let plan = propose_update(model, graph, question, answer, focus)?;
    if plan.ops.is_empty() {
        return Ok(Vec::new());
    }
    log.push(OpLogEntry::Started {
        input: question.to_string(),
        revision: graph.revision(),
    });
    let mut replan = |g: &KnowledgeGraph, _: &ChatHistory| -> Result<Plan, MapError> {
        match propose_update(model, g, question, answer, focus) {
            Ok(plan) if plan.ops.is_empty() => Err(MapError::PlanningFailure("nothing left to add".into())),
            Ok(plan) => Ok(plan),
            Err(OracleError::Provider { stage, source }) => Err(MapError::Provider { stage, source }),
            Err(other) => Err(MapError::PlanningFailure(other.to_string())),
        }
    };
    match manager.execute(plan, graph, history, Origin::DocumentDerived, log, &mut replan) {
        Ok(outcome) => Ok(outcome.applied),
        Err(MapError::PlanningFailure(_)) => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

#[derive(Deserialize)]
struct RawSuggestion {
    #[serde(default)]
    topic: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    relationship: String,
}

/// A description must read as one complete sentence.
fn is_full_sentence(text: &str) -> bool {
    let t = text.trim();
    t.ends_with('.') && word_count(t) >= 8
}

/// Asks for up to five expansion topics for `node`. Topics already on the
/// graph, already suggested or repeated are dropped, as are descriptions
/// that are not full sentences.
pub fn suggest(
    model: &dyn LanguageModel,
    graph: &KnowledgeGraph,
    node: NodeId,
    existing: &[Suggestion],
    doc_context: &str,
) -> Result<Vec<Suggestion>, OracleError> {
    let Some(target) = graph.node(node) else {
        return Err(OracleError::Provider {
            stage: Stage::Suggest,
            source: ProviderError::InvalidRequest(format!("node {node} does not exist")),
        });
    };
    let existing_nodes: Vec<&str> = graph.nodes().map(|n| n.title.as_str()).collect();
    let node_info = if target.detail.is_empty() {
        target.title.clone()
    } else {
        format!("{}: {}", target.title, target.detail)
    };
    let existing_topics: Vec<&str> = existing.iter().map(|s| s.topic.as_str()).collect();
    let existing_text = if existing_topics.is_empty() {
        "(none)".to_string()
    } else {
        existing_topics.join("; ")
    };
    let prompt = prompts::render(
        PromptId::GenerateSuggestions,
        &[
            ("existing_nodes", &existing_nodes.join(", ")),
            ("node_info", &node_info),
            ("existing_suggestions", &existing_text),
            ("content", doc_context),
        ],
    )
    .expect("generate_suggestions placeholders");
    let out = model
        .complete(&CompletionRequest::new(PromptId::GenerateSuggestions, target.title.clone(), prompt))
        .map_err(provider(Stage::Suggest))?;
    let json = match (out.find('['), out.rfind(']')) {
        (Some(start), Some(end)) if start < end => &out[start..=end],
        _ if out.trim().is_empty() => "[]",
        _ => {
            return Err(OracleError::Provider {
                stage: Stage::Suggest,
                source: ProviderError::BadResponse("suggestions are not a JSON array".into()),
            })
        }
    };
    let raw: Vec<RawSuggestion> = serde_json::from_str(json).map_err(|e| OracleError::Provider {
        stage: Stage::Suggest,
        source: ProviderError::BadResponse(e.to_string()),
    })?;

    let mut seen: BTreeSet<String> = existing.iter().map(|s| normalize_title(&s.topic)).collect();
    seen.extend(graph.nodes().map(|n| normalize_title(&n.title)));
    let mut out = Vec::new();
    for item in raw {
        let key = normalize_title(&item.topic);
        if key.is_empty() || !is_full_sentence(&item.description) || !seen.insert(key) {
            continue;
        }
        let relationship = item.relationship.trim();
        out.push(Suggestion {
            topic: item.topic.trim().to_string(),
            description: item.description.trim().to_string(),
            relationship: if relationship.is_empty() {
                ORPHAN_LABEL.to_string()
            } else {
                relationship.to_string()
            },
        });
        if out.len() == MAX_SUGGESTIONS {
            break;
        }
    }
    Ok(out)
}

pub const REFERENCES_HEADING: &str = "References:";

fn references_block(sources: &[SourceRef]) -> String {
    let mut out = REFERENCES_HEADING.to_string();
    for (i, s) in sources.iter().enumerate() {
        let _ = write!(out, "\n[{}] {}", i + 1, s.label());
    }
    out
}

fn node_note(node_name: &str) -> String {
    format!("Note: this question was asked specifically about the node \"{node_name}\".")
}

/// Adds whatever the rewrite left out: a reference section naming every
/// source and the node note.
/// Keeps only the citation numbers that name one of `count` sources; a
/// marker left with none is removed.
fn prune_citations(text: &str, count: usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (span, numbers) in crate::retriever::citation_markers(text) {
        out.push_str(&text[last..span.start]);
        last = span.end;
        let kept: Vec<String> = numbers
            .into_iter()
            .filter(|n| (1..=count).contains(n))
            .map(|n| n.to_string())
            .collect();
        if !kept.is_empty() {
            out.push_str(&format!("[{}]", kept.join(", ")));
        } else if out.ends_with(' ') && text[last..].starts_with(['.', ',', ';', ':', ' ']) {
            out.pop();
        }
    }
    out.push_str(&text[last..]);
    out
}

fn complete_reply(text: &str, sources: &[SourceRef], node_name: Option<&str>) -> String {
    let text = text.trim();
    let mut body = match text.find(REFERENCES_HEADING) {
        Some(at) => format!("{}{}", prune_citations(&text[..at], sources.len()), &text[at..]),
        None => prune_citations(text, sources.len()),
    };
    if !sources.is_empty() {
        let listed = body.find(REFERENCES_HEADING).is_some_and(|at| {
            let section = &body[at..];
            sources.iter().all(|s| section.contains(&s.doc_title))
        });
        if !listed {
            if let Some(at) = body.find(REFERENCES_HEADING) {
                body.truncate(at);
            }
            let trimmed = body.trim_end().to_string();
            body = format!("{trimmed}\n\n{}", references_block(sources));
        }
    }
    if let Some(name) = node_name {
        if !body.contains(name) || !body.to_lowercase().contains("node") {
            body = format!("{body}\n\n{}", node_note(name));
        }
    }
    body
}

/// Rewrites the answer for the chat panel with a reference section and, for
/// node-focused questions, a note naming the node. Never fails: if the
/// rewrite call fails the original answer is kept and the references are
/// appended mechanically.
pub fn finalize(
    model: &dyn LanguageModel,
    input: &str,
    refined: &str,
    answer: &str,
    sources: &[SourceRef],
    node_name: Option<&str>,
) -> String {
    let source_text = if sources.is_empty() {
        "(none)".to_string()
    } else {
        sources
            .iter()
            .enumerate()
            .map(|(i, s)| format!("[{}] {}", i + 1, s.label()))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let values = [
        ("input", input),
        ("query", refined),
        ("answer", answer),
        ("sources", source_text.as_str()),
    ];
    let prompt = match node_name {
        Some(name) => {
            let mut all = values.to_vec();
            all.push(("node_name", name));
            prompts::render(PromptId::RewriteFinalOutput, &all)
        }
        None => prompts::render_omitting(PromptId::RewriteFinalOutput, "node_name", &values),
    }
    .expect("rewrite_final_output placeholders");
    let request = CompletionRequest::new(PromptId::RewriteFinalOutput, input, prompt);
    match model.complete(&request) {
        Ok(text) if !text.trim().is_empty() => complete_reply(&text, sources, node_name),
        Ok(_) => complete_reply(answer, sources, node_name),
        Err(e) => {
            tracing::warn!(error = %e, "final rewrite failed; using the unrewritten answer");
            complete_reply(answer, sources, node_name)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{ChunkId, NodeId};
    use crate::provider::ScriptedProvider;

    #[test]
    fn classification_shape() {
        assert_eq!(
            parse_classification("category: search\ncontent: What is X?"),
            Ok((Category::Search, "What is X?".into()))
        );
        assert_eq!(
            parse_classification("**Category:** \"edit\"\n**Content:** Add Y"),
            Ok((Category::Edit, "Add Y".into()))
        );
        assert!(parse_classification("search").is_err());
        assert!(parse_classification("category: lookup\ncontent: x").is_err());
    }

    #[test]
    fn expansion_is_coerced_to_the_subtopic_query() {
        assert_eq!(
            coerce_expansion("Tell me more about carbon sinks", "x"),
            expansion_query("carbon sinks")
        );
        assert_eq!(
            coerce_expansion("Explain ocean acidification in more detail.", "x"),
            expansion_query("ocean acidification")
        );
        let already = expansion_query("X");
        assert_eq!(coerce_expansion(&already, "x"), already);
    }

    #[test]
    fn classify_reasks_once_then_fails() {
        let model = ScriptedProvider::new();
        model.add(crate::provider::TranscriptEntry::sequence(
            PromptId::ParseQuery,
            "",
            ["not the shape", "still not"],
        ));
        assert!(matches!(
            classify(&model, "hello", &ChatHistory::default()),
            Err(OracleError::UnparseableClassification(_))
        ));
        assert_eq!(model.calls_for(PromptId::ParseQuery), 2);
    }

    fn source(title: &str, page: u32, chunk: u64) -> SourceRef {
        SourceRef {
            doc_title: title.into(),
            page,
            chunk: ChunkId(chunk),
            range: 0..1,
        }
    }

    #[test]
    fn finalize_falls_back_on_failure() {
        let model = ScriptedProvider::new();
        let sources = [source("Climate.txt", 1, 1), source("Climate.txt", 2, 2)];
        let out = finalize(&model, "q", "q", "The answer [1].", &sources, None);
        assert!(out.starts_with("The answer [1]."));
        assert!(out.ends_with("References:\n[1] Climate.txt, page 1\n[2] Climate.txt, page 2"));
    }

    #[test]
    fn finalize_adds_missing_node_note() {
        let model = ScriptedProvider::new();
        model.script(PromptId::RewriteFinalOutput, "", "Rewritten.\n\nReferences:\n[1] Climate.txt, page 1");
        let out = finalize(&model, "q", "q", "a", &[source("Climate.txt", 1, 1)], Some("Causes"));
        assert!(out.starts_with("Rewritten."));
        assert!(out.ends_with(&node_note("Causes")));
        assert_eq!(out.matches(REFERENCES_HEADING).count(), 1);
    }

    #[test]
    fn suggestions_are_filtered_and_capped() {
        let mut g = KnowledgeGraph::new();
        let node = g.add_node("Projections", "", Origin::DocumentDerived, None).unwrap();
        let item = |t: &str| {
            format!(r#"{{"topic": "{t}", "description": "This topic covers {t} in the scope of the projections.", "relationship": "is a component of"}}"#)
        };
        let topics = ["A", "B", "a", "C", "D", "E", "F", "Projections"];
        let mut list: Vec<String> = topics.iter().map(|t| item(t)).collect();
        list.push(r#"{"topic": "Short", "description": "Too short.", "relationship": "x"}"#.into());
        let model = ScriptedProvider::new();
        model.script(PromptId::GenerateSuggestions, "Projections", &format!("[{}]", list.join(",")));
        let existing = [Suggestion {
            topic: "B".into(),
            description: String::new(),
            relationship: String::new(),
        }];
        let got = suggest(&model, &g, node, &existing, "").unwrap();
        let names: Vec<&str> = got.iter().map(|s| s.topic.as_str()).collect();
        assert_eq!(names, vec!["A", "C", "D", "E", "F"]);
        assert!(suggest(&model, &g, NodeId(99), &[], "").is_err());
    }

    #[test]
    fn empty_suggestion_list_is_fine() {
        let mut g = KnowledgeGraph::new();
        let node = g.add_node("X", "", Origin::DocumentDerived, None).unwrap();
        let model = ScriptedProvider::new();
        model.script(PromptId::GenerateSuggestions, "X", "[]");
        assert!(suggest(&model, &g, node, &[], "").unwrap().is_empty());
    }
}

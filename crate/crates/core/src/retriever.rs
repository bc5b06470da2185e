//! Question answering over the graph and the document tree: graph lookup,
//! query rewriting, tree retrieval, relevance grading, cited synthesis and
//! backtracking of citations to source chunks.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::graph::{find_anchor, KnowledgeGraph};
use crate::ids::{ChunkId, TreeNodeId};
use crate::ingest::DocumentStore;
use crate::prompts::{self, PromptId};
use crate::provider::{CompletionRequest, LanguageModel, ProviderError, Stage};
use crate::raptor::{ChunkTree, Granularity, TreeError};
use crate::text::content_tokens;

pub const REFUSAL: &str = "I don't know";

/// Words that frame a question rather than name its topic.
const FRAMING: &[&str] = &[
    "definition", "define", "mean", "meaning", "explain", "describe", "concept", "topic",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrieveError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("no documents have been indexed")]
    EmptyTree,
    #[error("{stage} failed: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("retrieval failed: {0}")]
    Tree(TreeError),
}

impl From<TreeError> for RetrieveError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::EmptyTree | TreeError::NoChunks => RetrieveError::EmptyTree,
            other => RetrieveError::Tree(other),
        }
    }
}

fn provider(stage: Stage) -> impl FnOnce(ProviderError) -> RetrieveError {
    move |source| RetrieveError::Provider { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    /// Tree nodes retrieved before grading.
    pub k: usize,
    pub granularity: Granularity,
    /// Candidates graded per provider call.
    pub grade_batch: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            k: 8,
            granularity: Granularity::Collapsed,
            grade_batch: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedQuery {
    pub original: String,
    pub graph_answer: Option<String>,
    pub refined: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradedEvidence {
    pub node: TreeNodeId,
    /// Leaf chunks under the graded tree node.
    pub chunks: Vec<ChunkId>,
    pub relevance: Relevance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub doc_title: String,
    pub page: u32,
    pub chunk: ChunkId,
    /// Byte range of the chunk in its document body.
    pub range: Range<usize>,
}

impl SourceRef {
    pub fn label(&self) -> String {
        format!("{}, page {}", self.doc_title, self.page)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsweredQuery {
    pub query: RefinedQuery,
    /// Answer text; `[n]` markers index into `sources` (1-based).
    pub answer: String,
    pub sources: Vec<SourceRef>,
    pub evidence: Vec<GradedEvidence>,
    pub insufficient: bool,
}

impl AnsweredQuery {
    fn refusal(query: RefinedQuery, evidence: Vec<GradedEvidence>) -> Self {
        Self {
            query,
            answer: REFUSAL.to_string(),
            sources: Vec::new(),
            evidence,
            insufficient: true,
        }
    }
}

/// Answers from the graph alone when the best anchor node's title and
/// detail mention every content term of `input`. The answer lists the node
/// and each edge touching it.
pub fn query_graph(graph: &KnowledgeGraph, input: &str) -> Option<String> {
    let wanted: BTreeSet<String> = content_tokens(input)
        .into_iter()
        .filter(|t| !FRAMING.contains(&t.as_str()))
        .collect();
    if wanted.is_empty() {
        return None;
    }
    let top = find_anchor(graph, input).into_iter().next()?;
    let node = graph.node(top.node)?;
    let known: BTreeSet<String> = content_tokens(&node.title)
        .into_iter()
        .chain(content_tokens(&node.detail))
        .collect();
    if !wanted.is_subset(&known) {
        return None;
    }
    let mut out = node.title.clone();
    if !node.detail.is_empty() {
        let _ = write!(out, ": {}", node.detail);
    }
    for edge in graph.outgoing(node.id) {
        if let Some(child) = graph.node(edge.child) {
            let _ = write!(out, "\n- {} {}", edge.label, child.title);
        }
    }
    for edge in graph.incoming(node.id) {
        if let Some(parent) = graph.node(edge.parent) {
            let _ = write!(out, "\n- {} {} this concept", parent.title, edge.label);
        }
    }
    Some(out)
}

/// Drops the parts of `input` the graph already answers. Without a graph
/// answer there is nothing to drop and no provider call is made.
pub fn rewrite_query(
    model: &dyn LanguageModel,
    input: &str,
    graph_answer: Option<&str>,
) -> Result<RefinedQuery, RetrieveError> {
    let original = input.trim();
    if original.is_empty() {
        return Err(RetrieveError::EmptyQuery);
    }
    let refined = match graph_answer {
        None => original.to_string(),
        Some(graph_response) => {
            let prompt = prompts::render(
                PromptId::RefineQuery,
                &[("original_query", original), ("graph_response", graph_response)],
            )
            .expect("refine_query placeholders");
            let out = model
                .complete(&CompletionRequest::new(PromptId::RefineQuery, original, prompt))
                .map_err(provider(Stage::Rewrite))?;
            let out = out.trim();
            if out.is_empty() {
                original.to_string()
            } else {
                out.to_string()
            }
        }
    };
    Ok(RefinedQuery {
        original: original.to_string(),
        graph_answer: graph_answer.map(str::to_string),
        refined,
    })
}

fn numbered(passages: &[&str]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, p)| format!("[{}] {}", i + 1, p.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn parse_grade_line(line: &str) -> Option<(usize, Relevance)> {
    let line = line.trim().trim_start_matches(['[', '(', '#']);
    let digits: String = line.chars().take_while(char::is_ascii_digit).collect();
    let index: usize = digits.parse().ok()?;
    let rest = line[digits.len()..]
        .trim_start_matches([']', ')', ':', '.', '-', ' ', '\t'])
        .to_lowercase();
    let relevance = if rest.starts_with("relevant") {
        Relevance::Relevant
    } else if rest.starts_with("irrelevant") || rest.starts_with("not relevant") {
        Relevance::Irrelevant
    } else {
        return None;
    };
    Some((index, relevance))
}

/// Labels each candidate passage relevant or irrelevant, one provider call
/// per batch. A passage the grader leaves unlabeled counts as irrelevant;
/// a passage identical to the query is always relevant.
pub fn grade(
    model: &dyn LanguageModel,
    query: &str,
    candidates: &[&str],
    batch: usize,
) -> Result<Vec<Relevance>, RetrieveError> {
    let mut labels = Vec::with_capacity(candidates.len());
    for group in candidates.chunks(batch.max(1)) {
        let passages = numbered(group);
        let prompt = prompts::render(PromptId::GradeChunks, &[("query", query), ("passages", &passages)])
            .expect("grade_chunks placeholders");
        let subject = format!("{query}\n{passages}");
        let out = model
            .complete(&CompletionRequest::new(PromptId::GradeChunks, subject, prompt))
            .map_err(provider(Stage::Grade))?;
        let mut group_labels = vec![Relevance::Irrelevant; group.len()];
        for (index, relevance) in out.lines().filter_map(parse_grade_line) {
            if (1..=group.len()).contains(&index) {
                group_labels[index - 1] = relevance;
            }
        }
        for (label, text) in group_labels.iter_mut().zip(group) {
            if text.trim() == query.trim() {
                *label = Relevance::Relevant;
            }
        }
        labels.extend(group_labels);
    }
    Ok(labels)
}

/// Bracketed citation markers in `text`: byte span and the cited numbers.
pub(crate) fn citation_markers(text: &str) -> Vec<(Range<usize>, Vec<usize>)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(len) = text[i + 1..].find(']') {
                let inner = &text[i + 1..i + 1 + len];
                let numbers: Option<Vec<usize>> = inner
                    .split(',')
                    .map(|n| n.trim().parse::<usize>().ok())
                    .collect();
                if let Some(numbers) = numbers.filter(|n| !n.is_empty()) {
                    out.push((i..i + len + 2, numbers));
                    i += len + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// Rewrites passage citations into source citations. Returns the new text,
/// the sources in order of first citation, and whether any valid citation
/// was found. Markers naming no valid passage are removed.
fn backtrack(
    draft: &str,
    passages: &[Vec<ChunkId>],
    store: &DocumentStore,
) -> (String, Vec<SourceRef>, bool) {
    let mut sources: Vec<SourceRef> = Vec::new();
    let mut text = String::with_capacity(draft.len());
    let mut last = 0;
    let mut cited = false;
    for (span, numbers) in citation_markers(draft) {
        text.push_str(&draft[last..span.start]);
        last = span.end;
        let mut indices: Vec<usize> = Vec::new();
        for n in numbers {
            let Some(chunks) = n.checked_sub(1).and_then(|i| passages.get(i)) else {
                continue;
            };
            for chunk_id in chunks {
                let Some(chunk) = store.chunk(*chunk_id) else { continue };
                let Some(doc) = store.document(chunk.doc_id) else { continue };
                let position = match sources.iter().position(|s| s.chunk == *chunk_id) {
                    Some(p) => p,
                    None => {
                        sources.push(SourceRef {
                            doc_title: doc.title.clone(),
                            page: chunk.page,
                            chunk: chunk.id,
                            range: chunk.range.clone(),
                        });
                        sources.len() - 1
                    }
                };
                if !indices.contains(&(position + 1)) {
                    indices.push(position + 1);
                }
            }
        }
        if indices.is_empty() {
            // Drop the space that preceded a removed marker.
            if text.ends_with(' ') && draft[last..].starts_with(['.', ',', ';', ':', ' ']) {
                text.pop();
            }
            continue;
        }
        cited = true;
        let list: Vec<String> = indices.iter().map(ToString::to_string).collect();
        let _ = write!(text, "[{}]", list.join(", "));
    }
    text.push_str(&draft[last..]);
    (text, sources, cited)
}

fn is_refusal(text: &str) -> bool {
    let t = text.trim().to_lowercase().replace('’', "'");
    t.starts_with("i don't know") || t.starts_with("i do not know")
}

/// Full pipeline for one question. Pure given the graph, store, tree and
/// provider responses.
pub fn answer(
    model: &dyn LanguageModel,
    graph: &KnowledgeGraph,
    store: &DocumentStore,
    tree: &ChunkTree,
    input: &str,
    config: &RetrieverConfig,
) -> Result<AnsweredQuery, RetrieveError> {
    let graph_answer = query_graph(graph, input);
    let query = rewrite_query(model, input, graph_answer.as_deref())?;
    if tree.is_empty() {
        return Err(RetrieveError::EmptyTree);
    }
    let vector = model
        .embed(std::slice::from_ref(&query.refined))
        .map_err(provider(Stage::Embed))?
        .pop()
        .ok_or_else(|| RetrieveError::Provider {
            stage: Stage::Embed,
            source: ProviderError::BadResponse("no embedding returned".into()),
        })?;
    let hits = tree.retrieve(&vector, config.granularity, config.k)?;
    let texts: Vec<&str> = hits
        .iter()
        .filter_map(|(id, _)| tree.node(*id).map(|n| n.text.as_str()))
        .collect();
    let labels = if texts.is_empty() {
        Vec::new()
    } else {
        grade(model, &query.refined, &texts, config.grade_batch)?
    };
    let evidence: Vec<GradedEvidence> = hits
        .iter()
        .zip(&labels)
        .map(|((id, _), relevance)| GradedEvidence {
            node: *id,
            chunks: tree.leaf_chunks(*id),
            relevance: *relevance,
        })
        .collect();

    let kept: Vec<(&str, Vec<ChunkId>)> = evidence
        .iter()
        .zip(&texts)
        .filter(|(e, _)| e.relevance == Relevance::Relevant)
        .map(|(e, t)| (*t, e.chunks.clone()))
        .collect();
    if kept.is_empty() {
        return Ok(AnsweredQuery::refusal(query, evidence));
    }

    let mut context = String::new();
    if let Some(graph_answer) = &query.graph_answer {
        let _ = write!(context, "From the knowledge graph:\n{graph_answer}\n\n");
    }
    context.push_str(&numbered(&kept.iter().map(|(t, _)| *t).collect::<Vec<_>>()));
    let prompt = prompts::render(
        PromptId::QueryKnowledgeBase,
        &[("context", &context), ("question", &query.refined)],
    )
    .expect("query_knowledge_base placeholders");
    let request = CompletionRequest::new(PromptId::QueryKnowledgeBase, query.refined.clone(), prompt).planner();
    let passages: Vec<Vec<ChunkId>> = kept.into_iter().map(|(_, c)| c).collect();

    // One bounded retry when the draft cites nothing it was given.
    for _ in 0..2 {
        let draft = model.complete(&request).map_err(provider(Stage::Synthesize))?;
        if is_refusal(&draft) {
            return Ok(AnsweredQuery::refusal(query, evidence));
        }
        let (text, sources, cited) = backtrack(draft.trim(), &passages, store);
        if cited {
            return Ok(AnsweredQuery {
                query,
                answer: text,
                sources,
                evidence,
                insufficient: false,
            });
        }
        tracing::debug!("draft cites no retained passage; re-synthesizing");
    }
    Ok(AnsweredQuery::refusal(query, evidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Origin;
    use crate::provider::ScriptedProvider;

    #[test]
    fn grade_lines_are_parsed_leniently() {
        assert_eq!(parse_grade_line("1: relevant"), Some((1, Relevance::Relevant)));
        assert_eq!(parse_grade_line("[2] Irrelevant"), Some((2, Relevance::Irrelevant)));
        assert_eq!(parse_grade_line("3 - not relevant"), Some((3, Relevance::Irrelevant)));
        assert_eq!(parse_grade_line("relevant"), None);
    }

    #[test]
    fn markers_are_found() {
        let m = citation_markers("a [1] b [2, 3] c [x] [");
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].1, vec![2, 3]);
    }

    #[test]
    fn query_graph_on_empty_graph_is_absent() {
        assert_eq!(query_graph(&KnowledgeGraph::new(), "What are carbon sinks?"), None);
    }

    #[test]
    fn query_graph_needs_full_coverage() {
        let mut g = KnowledgeGraph::new();
        g.add_node("Carbon Sinks", "Forests and oceans absorb CO2.", Origin::DocumentDerived, None)
            .unwrap();
        assert!(query_graph(&g, "What are carbon sinks?").is_some());
        assert!(query_graph(&g, "What is the definition of carbon sinks?").is_some());
        assert!(query_graph(&g, "How do carbon sinks affect rainfall?").is_none());
    }

    #[test]
    fn rewrite_without_graph_answer_is_identity() {
        let model = ScriptedProvider::new();
        let q = rewrite_query(&model, "  What is X?  ", None).unwrap();
        assert_eq!(q.refined, "What is X?");
        assert!(model.calls().is_empty());
        assert_eq!(rewrite_query(&model, " ", None), Err(RetrieveError::EmptyQuery));
    }
}

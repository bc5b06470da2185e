use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::Serialize;

use super::{KnowledgeGraph, NodeId};
use crate::text::content_tokens;

/// A candidate anchor node for a phrase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorHit {
    pub node: NodeId,
    /// Overlap of phrase and title, counted from both sides (0..=2).
    pub title_score: f64,
    /// Fraction of phrase terms found in the detail text (0..=1).
    pub detail_score: f64,
}

impl AnchorHit {
    /// Single scalar for display; ranking uses the components lexicographically.
    pub fn score(&self) -> f64 {
        self.title_score + self.detail_score / 10.0
    }
}

fn overlap(phrase: &BTreeSet<String>, other: &BTreeSet<String>) -> usize {
    phrase.intersection(other).count()
}

/// Ranks nodes by lexical overlap with `phrase`: title match first, then
/// detail match, then node id. Nodes sharing no term with the phrase are
/// left out, so an empty result means "no plausible anchor".
pub fn find_anchor(graph: &KnowledgeGraph, phrase: &str) -> Vec<AnchorHit> {
    let wanted: BTreeSet<String> = content_tokens(phrase).into_iter().collect();
    if wanted.is_empty() {
        return Vec::new();
    }
    let mut hits: Vec<AnchorHit> = graph
        .nodes()
        .filter_map(|node| {
            let title: BTreeSet<String> = content_tokens(&node.title).into_iter().collect();
            let detail: BTreeSet<String> = content_tokens(&node.detail).into_iter().collect();
            let in_title = overlap(&wanted, &title);
            let in_detail = overlap(&wanted, &detail);
            if in_title == 0 && in_detail == 0 {
                return None;
            }
            let title_score = if in_title == 0 {
                0.0
            } else {
                in_title as f64 / wanted.len() as f64 + in_title as f64 / title.len() as f64
            };
            Some(AnchorHit {
                node: node.id,
                title_score,
                detail_score: in_detail as f64 / wanted.len() as f64,
            })
        })
        .collect();
    hits.sort_by(|a, b| {
        b.title_score
            .partial_cmp(&a.title_score)
            .unwrap_or(Ordering::Equal)
            .then(b.detail_score.partial_cmp(&a.detail_score).unwrap_or(Ordering::Equal))
            .then(a.node.cmp(&b.node))
    });
    hits
}

//! Document ingestion: chunking, embedding and exhaustive vector search.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::ids::{ChunkId, DocId};
use crate::provider::{cosine, LanguageModel, ProviderError};
use crate::text::word_count;

/// Marks a page boundary in uploaded text (what `pdftotext` emits).
pub const PAGE_BREAK: char = '\u{000C}';

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("document body is empty")]
    EmptyDocument,
    #[error("page breaks must be strictly increasing offsets inside the body")]
    InvalidPageBreaks,
    #[error("embedding failed: {0}")]
    EmbeddingFailure(#[source] ProviderError),
    #[error("vector has {got} dimensions, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    /// Chunks close at the first sentence boundary at or after this many words.
    pub target_words: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self { target_words: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocId,
    pub title: String,
    pub body: String,
    /// Byte offsets where pages 2, 3, ... begin.
    pub page_breaks: Vec<usize>,
}

impl Document {
    /// 1-based page containing byte offset `at`.
    pub fn page_of(&self, at: usize) -> u32 {
        1 + self.page_breaks.iter().filter(|b| **b <= at).count() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub doc_id: DocId,
    /// Byte range into the document body.
    pub range: Range<usize>,
    pub text: String,
    pub page: u32,
    pub embedding: Vec<f32>,
}

/// A parsed upload, ready for [`DocumentStore::ingest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Upload {
    pub title: String,
    pub body: String,
    pub page_breaks: Vec<usize>,
}

/// Reads upload text: an optional first line `title: ...` overrides
/// `fallback_title`, and form-feed characters become page breaks (they are
/// removed from the body).
pub fn parse_upload(text: &str, fallback_title: &str) -> Upload {
    let mut title = fallback_title.trim().to_string();
    let mut rest = text;
    let first_line_end = text.find('\n').unwrap_or(text.len());
    let first = &text[..first_line_end];
    if let Some(tag) = first.get(..6).filter(|tag| tag.eq_ignore_ascii_case("title:")) {
        title = first[tag.len()..].trim().to_string();
        rest = text[first_line_end..].trim_start_matches(['\r', '\n']);
    }
    let mut body = String::with_capacity(rest.len());
    let mut page_breaks = Vec::new();
    for ch in rest.chars() {
        if ch == PAGE_BREAK {
            if !body.is_empty() && page_breaks.last() != Some(&body.len()) {
                page_breaks.push(body.len());
            }
        } else {
            body.push(ch);
        }
    }
    if page_breaks.last() == Some(&body.len()) {
        page_breaks.pop();
    }
    if title.is_empty() {
        title = "Untitled".into();
    }
    Upload { title, body, page_breaks }
}

/// Splits `body` into byte ranges that tile it exactly. Each range ends on a
/// sentence boundary once it holds at least `target_words` words; a trailing
/// range without any words is folded into its predecessor.
pub fn chunk_ranges(body: &str, target_words: usize) -> Vec<Range<usize>> {
    let target = target_words.max(1);
    let mut ranges: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    let mut words = 0;
    for (offset, sentence) in body.split_sentence_bound_indices() {
        words += word_count(sentence);
        let end = offset + sentence.len();
        if words >= target {
            ranges.push(start..end);
            start = end;
            words = 0;
        }
    }
    if start < body.len() {
        match ranges.last_mut() {
            Some(last) if words == 0 => last.end = body.len(),
            _ => ranges.push(start..body.len()),
        }
    }
    ranges
}

/// Exact nearest-neighbour index under cosine similarity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dimension: usize,
    entries: BTreeMap<ChunkId, Vec<f32>>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: ChunkId, vector: Vec<f32>) -> Result<(), IngestError> {
        if vector.len() != self.dimension {
            return Err(IngestError::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    /// Top `k` chunks by cosine similarity, ties broken by chunk id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<(ChunkId, f32)>, IngestError> {
        if query.len() != self.dimension {
            return Err(IngestError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let mut scored: Vec<(ChunkId, f32)> = self
            .entries
            .iter()
            .map(|(id, v)| (*id, cosine(query, v)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub doc_id: DocId,
    pub chunks: usize,
}

/// Documents, their chunks and the vector index over them. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentStore {
    documents: BTreeMap<DocId, Document>,
    chunks: BTreeMap<ChunkId, Chunk>,
    index: VectorIndex,
    next_doc: u64,
    next_chunk: u64,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn document(&self, id: DocId) -> Option<&Document> {
        self.documents.get(&id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn chunk(&self, id: ChunkId) -> Option<&Chunk> {
        self.chunks.get(&id)
    }

    /// All chunks in id order (which is ingestion order).
    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values()
    }

    pub fn chunks_of(&self, doc: DocId) -> impl Iterator<Item = &Chunk> {
        self.chunks.values().filter(move |c| c.doc_id == doc)
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Chunks, embeds and indexes a document. Nothing is stored unless every
    /// step succeeds.
    pub fn ingest(
        &mut self,
        model: &dyn LanguageModel,
        upload: Upload,
        config: &ChunkConfig,
    ) -> Result<IngestReport, IngestError> {
        let Upload { title, body, page_breaks } = upload;
        if body.trim().is_empty() {
            return Err(IngestError::EmptyDocument);
        }
        let increasing = page_breaks.windows(2).all(|w| w[0] < w[1]);
        let in_range = page_breaks
            .iter()
            .all(|b| *b > 0 && *b < body.len() && body.is_char_boundary(*b));
        if !increasing || !in_range {
            return Err(IngestError::InvalidPageBreaks);
        }
        let ranges = chunk_ranges(&body, config.target_words);
        let texts: Vec<String> = ranges.iter().map(|r| body[r.clone()].to_string()).collect();
        let vectors = model.embed(&texts).map_err(IngestError::EmbeddingFailure)?;
        if self.index.dimension == 0 && self.index.is_empty() {
            self.index = VectorIndex::new(model.dimension());
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != self.index.dimension) {
            return Err(IngestError::DimensionMismatch {
                expected: self.index.dimension,
                got: bad.len(),
            });
        }

        self.next_doc += 1;
        let doc = Document {
            id: DocId(self.next_doc),
            title,
            body,
            page_breaks,
        };
        let count = ranges.len();
        for ((range, text), embedding) in ranges.into_iter().zip(texts).zip(vectors) {
            self.next_chunk += 1;
            let id = ChunkId(self.next_chunk);
            self.index.insert(id, embedding.clone())?;
            self.chunks.insert(
                id,
                Chunk {
                    id,
                    doc_id: doc.id,
                    page: doc.page_of(range.start),
                    range,
                    text,
                    embedding,
                },
            );
        }
        let report = IngestReport {
            doc_id: doc.id,
            chunks: count,
        };
        self.documents.insert(doc.id, doc);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ScriptedProvider;

    fn upload(body: &str) -> Upload {
        Upload {
            title: "Climate.txt".into(),
            body: body.into(),
            page_breaks: vec![],
        }
    }

    #[test]
    fn one_sentence_is_one_chunk() {
        let mut store = DocumentStore::new();
        let body = "Carbon sinks absorb more carbon than they release.";
        let report = store
            .ingest(&ScriptedProvider::new(), upload(body), &ChunkConfig::default())
            .unwrap();
        assert_eq!(report.chunks, 1);
        let chunk = store.chunks().next().unwrap();
        assert_eq!(chunk.range, 0..body.len());
        assert_eq!(chunk.page, 1);
    }

    #[test]
    fn empty_body_rejected() {
        let mut store = DocumentStore::new();
        let err = store.ingest(&ScriptedProvider::new(), upload("  \n"), &ChunkConfig::default());
        assert_eq!(err, Err(IngestError::EmptyDocument));
    }

    #[test]
    fn bad_page_breaks_rejected() {
        let mut store = DocumentStore::new();
        let mut up = upload("One. Two. Three.");
        up.page_breaks = vec![5, 5];
        assert_eq!(
            store.ingest(&ScriptedProvider::new(), up, &ChunkConfig::default()),
            Err(IngestError::InvalidPageBreaks)
        );
    }

    #[test]
    fn upload_front_matter_and_page_markers() {
        let up = parse_upload("Title: Climate.txt\nFirst page.\u{c}Second page.\u{c}", "fallback");
        assert_eq!(up.title, "Climate.txt");
        assert_eq!(up.body, "First page.Second page.");
        assert_eq!(up.page_breaks, vec![11]);
        let plain = parse_upload("No front matter here.", "notes.md");
        assert_eq!(plain.title, "notes.md");
        assert_eq!(plain.body, "No front matter here.");
    }

    #[test]
    fn page_mapping_counts_breaks() {
        let doc = Document {
            id: DocId(1),
            title: "t".into(),
            body: "x".repeat(100),
            page_breaks: vec![10, 50],
        };
        assert_eq!(doc.page_of(0), 1);
        assert_eq!(doc.page_of(10), 2);
        assert_eq!(doc.page_of(49), 2);
        assert_eq!(doc.page_of(50), 3);
    }

    #[test]
    fn search_self_similarity_and_large_k() {
        let mut store = DocumentStore::new();
        let body = "Oceans absorb heat. Forests store carbon. Glaciers are melting fast.";
        store
            .ingest(&ScriptedProvider::new(), upload(body), &ChunkConfig { target_words: 3 })
            .unwrap();
        let second = store.chunks().nth(1).unwrap();
        let hits = store.index().search(&second.embedding, 10).unwrap();
        assert_eq!(hits[0].0, second.id);
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(hits.len(), store.chunks().count());
        assert!(matches!(
            store.index().search(&[1.0], 1),
            Err(IngestError::DimensionMismatch { .. })
        ));
    }
}

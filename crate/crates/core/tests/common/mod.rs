#![allow(dead_code)]

use cokg_core::ids::{ChunkId, DocId};
use cokg_core::ingest::Chunk;
use cokg_core::provider::{LanguageModel, ScriptedProvider};

pub const RAPTOR_50: &str = include_str!("../../../../fixtures/raptor_50.txt");
pub const TWO_CLUSTERS: &str = include_str!("../../../../fixtures/two_clusters.txt");

pub fn summarizing() -> ScriptedProvider {
    ScriptedProvider::new().with_extractive_summaries()
}

/// One chunk per non-empty line, embedded with the scripted hash embedding.
pub fn line_chunks(model: &dyn LanguageModel, text: &str) -> Vec<Chunk> {
    let lines: Vec<String> = text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect();
    let vectors = model.embed(&lines).unwrap();
    lines
        .into_iter()
        .zip(vectors)
        .enumerate()
        .map(|(i, (text, embedding))| Chunk {
            id: ChunkId(i as u64 + 1),
            doc_id: DocId(1),
            range: 0..text.len(),
            page: 1,
            text,
            embedding,
        })
        .collect()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    let n = dot(a, a).sqrt() * dot(b, b).sqrt();
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}

//! Hierarchical retrieval index built by recursive clustering and
//! summarization of chunks.
//!
//! Level 0 holds one leaf per chunk. Each further level clusters the nodes
//! of the level below with k-means (k = ⌈n / cluster_size⌉, seeded k-means++
//! initialisation, hard assignment), asks the model for a summary of every
//! cluster and embeds it. Building stops when a level has a single node or
//! the level cap is reached; the nodes of the last level are the roots.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{ChunkId, TreeNodeId};
use crate::ingest::Chunk;
use crate::prompts::{self, PromptId};
use crate::provider::{cosine, CompletionRequest, LanguageModel, ProviderError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("cannot build a tree from zero chunks")]
    NoChunks,
    #[error("the retrieval tree is empty")]
    EmptyTree,
    #[error("embedding failed: {0}")]
    EmbeddingFailure(#[source] ProviderError),
    #[error("summarization failed: {0}")]
    SummaryFailure(#[source] ProviderError),
    #[error("query has {got} dimensions, tree expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Average members per cluster; k = ⌈n / cluster_size⌉.
    pub cluster_size: usize,
    /// Highest summary level that may be built.
    pub max_level: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            cluster_size: 5,
            max_level: 4,
            seed: 0x7261_7074,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: TreeNodeId,
    pub level: usize,
    pub text: String,
    pub embedding: Vec<f32>,
    pub children: Vec<TreeNodeId>,
    /// Source chunk; set exactly for leaves.
    pub chunk: Option<ChunkId>,
}

/// Which tree levels a retrieval may draw from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Upper half of the summary levels: overviews.
    Broad,
    /// Leaf chunks only: grounded detail.
    Detailed,
    /// Every node scored together.
    #[default]
    Collapsed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChunkTree {
    nodes: BTreeMap<TreeNodeId, TreeNode>,
    roots: Vec<TreeNodeId>,
    max_level: usize,
}

/// Hard k-means over `points` with seeded k-means++ initialisation. Returns
/// one cluster index per point; some of the `k` clusters may end up empty.
pub fn kmeans(points: &[Vec<f32>], k: usize, seed: u64, max_iterations: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let as_f64 = |p: &[f32]| p.iter().map(|v| f64::from(*v)).collect::<Vec<f64>>();
    let first = rng.random_range(0..n);
    centroids.push(as_f64(&points[first]));
    let mut chosen = BTreeSet::from([first]);
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| {
                        p.iter()
                            .zip(c)
                            .map(|(x, y)| (f64::from(*x) - y).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.insert(pick);
        centroids.push(as_f64(&points[pick]));
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iterations.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = p.iter().zip(centroid).map(|(x, y)| (f64::from(*x) - y).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f32>> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, a)| **a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, slot) in centroid.iter_mut().enumerate() {
                *slot = members.iter().map(|m| f64::from(m[d])).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assignment
}

fn summarize(model: &dyn LanguageModel, texts: &[&str]) -> Result<String, TreeError> {
    let passages = texts.join("\n\n");
    let prompt = prompts::render(PromptId::Summarize, &[("passages", &passages)])
        .map_err(|e| TreeError::SummaryFailure(ProviderError::InvalidRequest(e.to_string())))?;
    let summary = model
        .complete(&CompletionRequest::new(PromptId::Summarize, passages.clone(), prompt))
        .map_err(TreeError::SummaryFailure)?;
    let summary = summary.trim();
    if summary.is_empty() {
        return Err(TreeError::SummaryFailure(ProviderError::BadResponse("empty summary".into())));
    }
    Ok(summary.to_string())
}

/// Builds the tree over `chunks` (in the given order). Any provider failure
/// aborts the build; no partial tree is returned.
pub fn build_tree(
    chunks: &[Chunk],
    model: &dyn LanguageModel,
    config: &ClusterConfig,
) -> Result<ChunkTree, TreeError> {
    if chunks.is_empty() {
        return Err(TreeError::NoChunks);
    }
    let mut tree = ChunkTree::default();
    let mut next = 0u64;
    let mut current: Vec<TreeNodeId> = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        next += 1;
        let id = TreeNodeId(next);
        tree.nodes.insert(
            id,
            TreeNode {
                id,
                level: 0,
                text: chunk.text.clone(),
                embedding: chunk.embedding.clone(),
                children: Vec::new(),
                chunk: Some(chunk.id),
            },
        );
        current.push(id);
    }

    let mut level = 0;
    while current.len() > 1 && level < config.max_level {
        let k = current.len().div_ceil(config.cluster_size.max(1));
        let points: Vec<Vec<f32>> = current.iter().map(|id| tree.nodes[id].embedding.clone()).collect();
        let assignment = kmeans(&points, k, config.seed.wrapping_add(level as u64), config.max_iterations);

        // Clusters in order of their first member.
        let mut clusters: Vec<(usize, Vec<TreeNodeId>)> = Vec::new();
        for (id, cluster) in current.iter().zip(&assignment) {
            match clusters.iter_mut().find(|(c, _)| c == cluster) {
                Some((_, members)) => members.push(*id),
                None => clusters.push((*cluster, vec![*id])),
            }
        }

        let mut summaries = Vec::with_capacity(clusters.len());
        for (_, members) in &clusters {
            let texts: Vec<&str> = members.iter().map(|m| tree.nodes[m].text.as_str()).collect();
            summaries.push(summarize(model, &texts)?);
        }
        let vectors = model.embed(&summaries).map_err(TreeError::EmbeddingFailure)?;
        if vectors.len() != summaries.len() {
            return Err(TreeError::EmbeddingFailure(ProviderError::BadResponse(
                "embedding count mismatch".into(),
            )));
        }

        level += 1;
        let mut next_level = Vec::with_capacity(clusters.len());
        for (((_, members), text), embedding) in clusters.into_iter().zip(summaries).zip(vectors) {
            next += 1;
            let id = TreeNodeId(next);
            tree.nodes.insert(
                id,
                TreeNode {
                    id,
                    level,
                    text,
                    embedding,
                    children: members,
                    chunk: None,
                },
            );
            next_level.push(id);
        }
        current = next_level;
    }
    tree.roots = current;
    tree.max_level = level;
    Ok(tree)
}

impl ChunkTree {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn roots(&self) -> &[TreeNodeId] {
        &self.roots
    }

    pub fn node(&self, id: TreeNodeId) -> Option<&TreeNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    pub fn level(&self, level: usize) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values().filter(move |n| n.level == level)
    }

    /// Lowest level included by [`Granularity::Broad`].
    pub fn broad_floor(&self) -> usize {
        self.max_level.div_ceil(2).max(1)
    }

    /// Chunks under `id`, in tree order. A leaf yields its own chunk.
    pub fn leaf_chunks(&self, id: TreeNodeId) -> Vec<ChunkId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if let Some(node) = self.nodes.get(&n) {
                if let Some(chunk) = node.chunk {
                    out.push(chunk);
                }
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    /// Top `k` nodes by cosine similarity among the levels `granularity`
    /// admits, ties broken by node id.
    pub fn retrieve(
        &self,
        query: &[f32],
        granularity: Granularity,
        k: usize,
    ) -> Result<Vec<(TreeNodeId, f32)>, TreeError> {
        let dimension = self
            .nodes
            .values()
            .next()
            .map(|n| n.embedding.len())
            .ok_or(TreeError::EmptyTree)?;
        if query.len() != dimension {
            return Err(TreeError::DimensionMismatch {
                expected: dimension,
                got: query.len(),
            });
        }
        let floor = self.broad_floor();
        let admitted = |node: &TreeNode| match granularity {
            Granularity::Broad => node.level >= floor,
            Granularity::Detailed => node.level == 0,
            Granularity::Collapsed => true,
        };
        let mut scored: Vec<(TreeNodeId, f32)> = self
            .nodes
            .values()
            .filter(|n| admitted(n))
            .map(|n| (n.id, cosine(query, &n.embedding)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

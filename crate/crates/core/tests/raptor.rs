mod common;

use std::collections::BTreeSet;

use cokg_core::ids::{ChunkId, TreeNodeId};
use cokg_core::provider::{hash_embedding, HASH_EMBEDDING_DIM};
use cokg_core::raptor::{build_tree, ChunkTree, ClusterConfig, Granularity};
use common::{cos, line_chunks, summarizing, RAPTOR_50, TWO_CLUSTERS};
use rand::{Rng, SeedableRng};

fn sse(points: &[&Vec<f32>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let d = points[0].len();
    let mut mean = vec![0.0f64; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += *x as f64 / points.len() as f64;
        }
    }
    points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| (*x as f64 - m).powi(2)).sum::<f64>())
        .sum()
}

fn tree_of(text: &str) -> ChunkTree {
    let model = summarizing();
    build_tree(&line_chunks(&model, text), &model, &ClusterConfig::default()).unwrap()
}

#[test]
fn two_clusters_match_best_two_partition() {
    let model = summarizing();
    let chunks = line_chunks(&model, TWO_CLUSTERS);
    let tree = build_tree(&chunks, &model, &ClusterConfig::default()).unwrap();

    // exhaustive oracle: the 2-partition with least within-cluster squared error
    let pts: Vec<&Vec<f32>> = chunks.iter().map(|c| &c.embedding).collect();
    let n = pts.len();
    let mut best = (f64::INFINITY, 0u32);
    for mask in 1..(1u32 << (n - 1)) {
        let (a, b): (Vec<_>, Vec<_>) = (0..n).partition(|i| mask & (1 << i) != 0);
        let cost = sse(&a.iter().map(|i| pts[*i]).collect::<Vec<_>>()) + sse(&b.iter().map(|i| pts[*i]).collect::<Vec<_>>());
        if cost < best.0 {
            best = (cost, mask);
        }
    }
    let side_a: BTreeSet<ChunkId> = (0..n).filter(|i| best.1 & (1 << i) != 0).map(|i| chunks[i].id).collect();
    let side_b: BTreeSet<ChunkId> = chunks.iter().map(|c| c.id).filter(|c| !side_a.contains(c)).collect();

    let level1: Vec<_> = tree.level(1).collect();
    assert_eq!(level1.len(), 2);
    let groups: BTreeSet<BTreeSet<ChunkId>> = level1.iter().map(|s| tree.leaf_chunks(s.id).into_iter().collect()).collect();
    assert_eq!(groups, BTreeSet::from([side_a.clone(), side_b]));
    assert!(groups.iter().all(|g| g.len() == 5));
    // the fixture's two halves are the two topics
    assert_eq!(side_a.len(), 5);
}

#[test]
fn broad_query_near_cluster_a_ranks_its_summary_first() {
    let model = summarizing();
    let chunks = line_chunks(&model, TWO_CLUSTERS);
    let tree = build_tree(&chunks, &model, &ClusterConfig::default()).unwrap();
    let ocean: Vec<ChunkId> = chunks[..5].iter().map(|c| c.id).collect();
    let mut centroid = vec![0.0f32; HASH_EMBEDDING_DIM];
    for c in &chunks[..5] {
        for (m, x) in centroid.iter_mut().zip(&c.embedding) {
            *m += x / 5.0;
        }
    }
    let hits = tree.retrieve(&centroid, Granularity::Broad, 10).unwrap();
    // oracle: cosine scan over the admitted summary levels
    let floor = tree.broad_floor();
    let best = tree
        .nodes()
        .filter(|n| n.level >= floor)
        .max_by(|a, b| cos(&centroid, &a.embedding).total_cmp(&cos(&centroid, &b.embedding)).then(b.id.cmp(&a.id)))
        .unwrap();
    assert_eq!(hits[0].0, best.id);
    let mut first: Vec<ChunkId> = tree.leaf_chunks(hits[0].0);
    first.sort();
    assert_eq!(first, ocean);
}

#[test]
fn fifty_chunk_tree_properties() {
    let tree = tree_of(RAPTOR_50);
    assert!(tree.max_level() >= 2);

    // coverage: leaves under roots are exactly the inputs, once each
    let mut seen: Vec<ChunkId> = tree.roots().iter().flat_map(|r| tree.leaf_chunks(*r)).collect();
    seen.sort();
    assert_eq!(seen, (1..=50).map(ChunkId).collect::<Vec<_>>());

    for node in tree.nodes() {
        assert_eq!(node.children.is_empty(), node.level == 0);
        assert_eq!(node.chunk.is_some(), node.level == 0);
        for c in &node.children {
            assert!(tree.node(*c).unwrap().level < node.level);
        }
    }
}

#[test]
fn granularity_contracts() {
    let tree = tree_of(RAPTOR_50);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let q: Vec<f32> = (0..HASH_EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let detailed = tree.retrieve(&q, Granularity::Detailed, 100).unwrap();
        assert_eq!(detailed.len(), 50);
        assert!(detailed.iter().all(|(id, _)| tree.node(*id).unwrap().level == 0));
        let broad = tree.retrieve(&q, Granularity::Broad, 100).unwrap();
        assert!(!broad.is_empty());
        assert!(broad.iter().all(|(id, _)| tree.node(*id).unwrap().level >= tree.broad_floor()));
    }
}

#[test]
fn collapsed_equals_pooled_scan() {
    let tree = tree_of(RAPTOR_50);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(30);
    for i in 0..30 {
        let q = if i % 2 == 0 {
            hash_embedding(&format!("ocean forest policy {i}"), HASH_EMBEDDING_DIM, i)
        } else {
            (0..HASH_EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let mut scan: Vec<(TreeNodeId, f64)> = tree.nodes().map(|n| (n.id, cos(&q, &n.embedding))).collect();
        scan.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scan.truncate(8);
        let got = tree.retrieve(&q, Granularity::Collapsed, 8).unwrap();
        let got_ids: Vec<TreeNodeId> = got.iter().map(|h| h.0).collect();
        let want_ids: Vec<TreeNodeId> = scan.iter().map(|h| h.0).collect();
        assert_eq!(got_ids, want_ids);
        for ((_, a), (_, b)) in got.iter().zip(&scan) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}

#[test]
fn build_is_reproducible() {
    let a = serde_json::to_string(&tree_of(RAPTOR_50)).unwrap();
    let b = serde_json::to_string(&tree_of(RAPTOR_50)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_leaf_detailed() {
    let tree = tree_of("only passage here.\n");
    let leaf = tree.nodes().next().unwrap();
    let hits = tree.retrieve(&leaf.embedding, Granularity::Detailed, 5).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(tree.max_level(), 0);
}

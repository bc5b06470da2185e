use std::collections::{BTreeMap, BTreeSet, VecDeque};

use cokg_core::graph::{
    find_anchor, layout, GraphDelta, GraphError, GraphOp, KnowledgeGraph, LayoutConfig, LayoutMode, NodeId, NodePatch,
    Origin, OrphanPolicy, Position,
};
use cokg_core::map_manager::parse_op;
use proptest::prelude::*;

/// Independent cycle check: three-colour DFS over the exported edge list.
fn has_cycle(g: &KnowledgeGraph) -> bool {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in g.edges() {
        adj.entry(e.parent).or_default().push(e.child);
    }
    fn visit(n: NodeId, adj: &BTreeMap<NodeId, Vec<NodeId>>, colour: &mut BTreeMap<NodeId, u8>) -> bool {
        colour.insert(n, 1);
        for &c in adj.get(&n).into_iter().flatten() {
            match colour.get(&c).copied().unwrap_or(0) {
                1 => return true,
                0 if visit(c, adj, colour) => return true,
                _ => {}
            }
        }
        colour.insert(n, 2);
        false
    }
    let mut colour = BTreeMap::new();
    g.nodes()
        .map(|n| n.id)
        .any(|n| colour.get(&n).copied().unwrap_or(0) == 0 && visit(n, &adj, &mut colour))
}

/// Plain DFS over the edge list: is `to` reachable from `from`?
fn reaches(g: &KnowledgeGraph, from: NodeId, to: NodeId) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        if seen.insert(n) {
            stack.extend(g.edges().filter(|e| e.parent == n).map(|e| e.child));
        }
    }
    false
}

fn integrity_holds(g: &KnowledgeGraph) -> bool {
    let mut pairs = BTreeSet::new();
    g.edges().all(|e| g.contains(e.parent) && g.contains(e.child) && e.parent != e.child && pairs.insert((e.parent, e.child)))
        && g.groups().values().flatten().all(|n| g.contains(*n))
}

#[derive(Debug, Clone)]
enum Step {
    Add { parent: Option<usize>, title: usize },
    Edge { parent: usize, child: usize },
    Delete { node: usize, cascade: bool },
    Star { node: usize },
    Rename { node: usize, title: usize },
    Group { a: usize, b: usize },
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => (proptest::option::of(0usize..64), 0usize..20).prop_map(|(parent, title)| Step::Add { parent, title }),
        3 => (0usize..64, 0usize..64).prop_map(|(parent, child)| Step::Edge { parent, child }),
        1 => (0usize..64, any::<bool>()).prop_map(|(node, cascade)| Step::Delete { node, cascade }),
        1 => (0usize..64).prop_map(|node| Step::Star { node }),
        1 => (0usize..64, 0usize..20).prop_map(|(node, title)| Step::Rename { node, title }),
        1 => (0usize..64, 0usize..64).prop_map(|(a, b)| Step::Group { a, b }),
    ]
}

fn pick(g: &KnowledgeGraph, i: usize) -> Option<NodeId> {
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    (!ids.is_empty()).then(|| ids[i % ids.len()])
}

/// Runs one step; returns whether the graph accepted it.
fn run(g: &mut KnowledgeGraph, s: &Step) -> bool {
    match *s {
        Step::Add { parent, title } => {
            let parent = parent.and_then(|p| pick(g, p));
            g.add_node(&format!("topic {title}"), "", Origin::UserContributed, parent.map(|p| (p, "has")))
                .is_ok()
        }
        Step::Edge { parent, child } => match (pick(g, parent), pick(g, child)) {
            (Some(p), Some(c)) => g.add_edge(p, c, "relates to").is_ok(),
            _ => false,
        },
        Step::Delete { node, cascade } => match pick(g, node) {
            Some(n) => {
                let policy = if cascade { OrphanPolicy::Cascade } else { OrphanPolicy::Detach };
                g.delete_node(n, policy).is_ok()
            }
            None => false,
        },
        Step::Star { node } => match pick(g, node) {
            Some(n) => {
                let starred = !g.node(n).unwrap().starred;
                g.update_node(n, &NodePatch { starred: Some(starred), ..Default::default() }).is_ok()
            }
            None => false,
        },
        Step::Rename { node, title } => match pick(g, node) {
            Some(n) => g
                .update_node(n, &NodePatch { title: Some(format!("renamed {title}")), ..Default::default() })
                .is_ok(),
            None => false,
        },
        Step::Group { a, b } => match (pick(g, a), pick(g, b)) {
            (Some(a), Some(b)) => g.create_group(&[a, b]).is_ok(),
            _ => false,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_sequences_keep_invariants(steps in proptest::collection::vec(step(), 1..60)) {
        let mut g = KnowledgeGraph::new();
        let mut origins = BTreeMap::new();
        for s in &steps {
            let before = g.revision();
            let snapshot = g.clone();
            let accepted = run(&mut g, s);
            if accepted {
                prop_assert_eq!(g.revision(), before + 1);
            } else {
                prop_assert_eq!(&g, &snapshot);
            }
            prop_assert!(!has_cycle(&g));
            prop_assert!(integrity_holds(&g));
            for n in g.nodes() {
                let first = *origins.entry(n.id).or_insert(n.origin);
                prop_assert_eq!(first, n.origin);
            }
        }
        let text = g.serialize();
        let back = KnowledgeGraph::deserialize(&text).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(back.serialize(), text);
    }

    #[test]
    fn deltas_replay_between_any_two_revisions(
        first in proptest::collection::vec(step(), 0..30),
        second in proptest::collection::vec(step(), 0..30),
    ) {
        let mut g = KnowledgeGraph::new();
        for s in &first { run(&mut g, s); }
        let old = g.clone();
        for s in &second { run(&mut g, s); }
        let delta = GraphDelta::between(&old, &g);
        let mut replayed = old.clone();
        delta.apply(&mut replayed).unwrap();
        prop_assert_eq!(replayed, g);
    }

    #[test]
    fn layout_is_deterministic(steps in proptest::collection::vec(step(), 1..40)) {
        let mut g = KnowledgeGraph::new();
        for s in &steps { run(&mut g, s); }
        let cfg = LayoutConfig::default();
        prop_assert_eq!(layout(&g, &cfg, LayoutMode::Full).unwrap(), layout(&g, &cfg, LayoutMode::Full).unwrap());
    }

    #[test]
    fn op_text_round_trips(title in "[A-Za-z0-9 \"\\\\\n']{1,20}", detail in "[a-z \"\n]{0,20}", label in "[a-z ]{1,12}") {
        prop_assume!(!title.trim().is_empty() && !label.trim().is_empty());
        let ops = [
            GraphOp::AddNode { title: title.clone(), detail: detail.clone(), parent: Some("n1".into()), label: Some(label.clone()) },
            GraphOp::AddEdge { parent: title.clone(), child: "n2".into(), label: label.clone() },
            GraphOp::UpdateNode { node: "n3".into(), patch: NodePatch { detail: Some(detail.clone()), ..Default::default() } },
            GraphOp::DeleteEdge { parent: title.clone(), child: label.clone() },
        ];
        for op in ops {
            let parsed = parse_op(&op.to_string()).unwrap();
            prop_assert_eq!(parsed, op);
        }
    }
}

#[test]
fn anchor_under_emissions_with_labeled_edge() {
    let mut g = KnowledgeGraph::new();
    let ghg = g.add_node("Greenhouse Gas Emissions", "", Origin::DocumentDerived, None).unwrap();
    let fin = g
        .add_node("Financial Investment Relevance", "", Origin::UserContributed, Some((ghg, "is important for")))
        .unwrap();
    assert_eq!(g.node_count(), 2);
    let e = g.edge_between(ghg, fin).unwrap();
    assert_eq!(e.label, "is important for");
}

#[test]
fn root_in_empty_graph() {
    let mut g = KnowledgeGraph::new();
    g.add_node("Only", "", Origin::UserContributed, None).unwrap();
    assert_eq!((g.node_count(), g.edge_count()), (1, 0));
    assert_eq!(g.add_node("  ", "", Origin::UserContributed, None), Err(GraphError::EmptyTitle));
    assert_eq!(
        g.add_node("x", "", Origin::UserContributed, Some((NodeId(99), "has"))),
        Err(GraphError::UnknownParent(NodeId(99)))
    );
}

#[test]
fn add_three_matches_counter_replay() {
    let mut g = KnowledgeGraph::new();
    let mut log: Vec<&str> = Vec::new();
    for t in ["a", "b", "c"] {
        g.add_node(t, "", Origin::UserContributed, None).unwrap();
        log.push("add");
    }
    let counted_nodes = log.iter().filter(|e| **e == "add").count();
    assert_eq!(g.node_count(), counted_nodes);
    assert_eq!(g.revision(), log.len() as u64);
}

#[test]
fn common_child_with_two_parents() {
    let mut g = KnowledgeGraph::new();
    let causes = g.add_node("Causes of Climate Change", "", Origin::DocumentDerived, None).unwrap();
    let bio = g.add_node("Biodiversity Loss", "", Origin::DocumentDerived, None).unwrap();
    let def = g.add_node("Deforestation", "", Origin::DocumentDerived, None).unwrap();
    g.add_edge(causes, def, "contributes to").unwrap();
    g.add_edge(bio, def, "leads to").unwrap();
    assert_eq!(g.parents(def).len(), 2);
    assert!(matches!(g.add_edge(def, causes, "x"), Err(GraphError::WouldCreateCycle { .. })));
    assert!(matches!(g.add_edge(causes, def, "x"), Err(GraphError::DuplicateEdge { .. })));
}

#[test]
fn two_cycle_rejected() {
    let mut g = KnowledgeGraph::new();
    let a = g.add_node("A", "", Origin::UserContributed, None).unwrap();
    let b = g.add_node("B", "", Origin::UserContributed, None).unwrap();
    g.add_edge(a, b, "x").unwrap();
    assert_eq!(g.add_edge(b, a, "x"), Err(GraphError::WouldCreateCycle { parent: b, child: a }));
    assert!(matches!(g.add_edge(a, a, "x"), Err(GraphError::WouldCreateCycle { .. })));
}

#[test]
fn random_twenty_node_dag_stays_sortable() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let mut g = KnowledgeGraph::new();
    let ids: Vec<NodeId> = (0..20)
        .map(|i| g.add_node(&format!("v{i}"), "", Origin::UserContributed, None).unwrap())
        .collect();
    let mut accepted = 0;
    for _ in 0..400 {
        let p = ids[rng.random_range(0..20)];
        let c = ids[rng.random_range(0..20)];
        let cyclic_if_added = p == c || reaches(&g, c, p);
        match g.add_edge(p, c, "r") {
            Ok(_) => {
                assert!(!cyclic_if_added);
                accepted += 1;
            }
            Err(GraphError::WouldCreateCycle { .. }) => assert!(cyclic_if_added),
            Err(GraphError::DuplicateEdge { .. }) => {}
            Err(e) => panic!("unexpected {e}"),
        }
        assert!(g.topological_order().is_some());
    }
    assert!(accepted > 20);
}

/// Oracle: what survives a delete, computed by reachability from every other
/// root after removing the node.
fn survivors_oracle(g: &KnowledgeGraph, gone: NodeId, cascade: bool) -> BTreeSet<NodeId> {
    let all: BTreeSet<NodeId> = g.nodes().map(|n| n.id).filter(|n| *n != gone).collect();
    if !cascade {
        return all;
    }
    let doomed_candidates = g.descendants(gone);
    // a descendant survives if it can be reached from a node that is neither
    // the deleted node nor one of its descendants
    let outside: Vec<NodeId> = all.iter().copied().filter(|n| !doomed_candidates.contains(n)).collect();
    let mut reach: BTreeSet<NodeId> = outside.iter().copied().collect();
    let mut queue: VecDeque<NodeId> = outside.into_iter().collect();
    while let Some(n) = queue.pop_front() {
        for c in g.children(n) {
            if c != gone && reach.insert(c) {
                queue.push_back(c);
            }
        }
    }
    reach
}

#[test]
fn delete_policies_match_reachability() {
    let mut g = KnowledgeGraph::new();
    let root = g.add_node("Root", "", Origin::UserContributed, None).unwrap();
    let mid = g.add_node("Mid", "", Origin::UserContributed, Some((root, "has"))).unwrap();
    let only = g.add_node("Only child", "", Origin::UserContributed, Some((mid, "has"))).unwrap();
    let shared = g.add_node("Shared", "", Origin::UserContributed, Some((mid, "has"))).unwrap();
    g.add_edge(root, shared, "also").unwrap();

    for cascade in [false, true] {
        let mut h = g.clone();
        let expected = survivors_oracle(&h, mid, cascade);
        let policy = if cascade { OrphanPolicy::Cascade } else { OrphanPolicy::Detach };
        h.delete_node(mid, policy).unwrap();
        let left: BTreeSet<NodeId> = h.nodes().map(|n| n.id).collect();
        assert_eq!(left, expected);
        assert!(integrity_holds(&h));
        if cascade {
            assert!(!h.contains(only));
        } else {
            assert!(h.parents(only).is_empty());
        }
        assert_eq!(h.parents(shared), vec![root]);
    }

    let mut leaf_case = g.clone();
    assert_eq!(leaf_case.delete_node(only, OrphanPolicy::Cascade).unwrap(), vec![only]);
    assert_eq!(g.clone().delete_node(NodeId(42), OrphanPolicy::Detach), Err(GraphError::UnknownNode(NodeId(42))));
}

#[test]
fn update_touches_only_patched_fields() {
    let mut g = KnowledgeGraph::new();
    let a = g.add_node("X", "detail", Origin::DocumentDerived, None).unwrap();
    let before = g.node(a).unwrap().clone();
    g.update_node(a, &NodePatch { starred: Some(true), ..Default::default() }).unwrap();
    let after = g.node(a).unwrap();
    assert!(after.starred);
    assert_eq!((&after.title, &after.detail, after.origin, after.position), (&before.title, &before.detail, before.origin, before.position));

    g.update_node(a, &NodePatch { title: Some("X'".into()), ..Default::default() }).unwrap();
    let back = KnowledgeGraph::deserialize(&g.serialize()).unwrap();
    assert_eq!(back.node(a).unwrap().title, "X'");

    assert_eq!(g.update_node(a, &NodePatch::default()), Err(GraphError::EmptyPatch));
    let origin_patch = serde_json::from_str::<NodePatch>(r#"{"origin":"user-contributed"}"#);
    assert!(origin_patch.is_err());
}

/// Brute force: every node scored with plain token overlap on titles.
#[test]
fn anchor_matches_exhaustive_scorer() {
    let mut g = KnowledgeGraph::new();
    let a = g.add_node("Carbon Sinks", "", Origin::DocumentDerived, None).unwrap();
    let b = g.add_node("Carbon Sinks", "", Origin::DocumentDerived, None).unwrap();
    g.add_node("Ocean Warming", "", Origin::DocumentDerived, None).unwrap();
    let hits = find_anchor(&g, "carbon sinks");
    let ids: Vec<NodeId> = hits.iter().map(|h| h.node).collect();
    assert_eq!(ids, vec![a, b]);
    assert!(find_anchor(&g, "quantum chromodynamics").is_empty());

    let mut g2 = KnowledgeGraph::new();
    g2.add_node("Climate Change", "", Origin::DocumentDerived, None).unwrap();
    let target = g2.add_node("Greenhouse Gas Emissions", "", Origin::DocumentDerived, None).unwrap();
    g2.add_node("Gas Prices", "", Origin::DocumentDerived, None).unwrap();
    assert_eq!(find_anchor(&g2, "greenhouse gas emissions")[0].node, target);
}

/// Independent breadth-first depth computation (longest path from a root).
fn bfs_depths(g: &KnowledgeGraph) -> BTreeMap<NodeId, usize> {
    let mut depth: BTreeMap<NodeId, usize> = g.roots().into_iter().map(|r| (r, 0)).collect();
    let mut queue: VecDeque<NodeId> = depth.keys().copied().collect();
    while let Some(n) = queue.pop_front() {
        for c in g.children(n) {
            let d = depth[&n] + 1;
            if depth.get(&c).is_none_or(|old| *old < d) {
                depth.insert(c, d);
                queue.push_back(c);
            }
        }
    }
    depth
}

#[test]
fn layout_columns_follow_depth() {
    let cfg = LayoutConfig::default();
    let s = cfg.column_spacing;
    let mut single = KnowledgeGraph::new();
    let only = single.add_node("A", "", Origin::UserContributed, None).unwrap();
    assert_eq!(layout(&single, &cfg, LayoutMode::Full).unwrap()[&only], Position::new(0.0, 0.0));

    let mut chain = KnowledgeGraph::new();
    let a = chain.add_node("A", "", Origin::UserContributed, None).unwrap();
    let b = chain.add_node("B", "", Origin::UserContributed, Some((a, "r"))).unwrap();
    let c = chain.add_node("C", "", Origin::UserContributed, Some((b, "r"))).unwrap();
    let pos = layout(&chain, &cfg, LayoutMode::Full).unwrap();
    assert_eq!([pos[&a].x, pos[&b].x, pos[&c].x], [0.0, s, 2.0 * s]);

    let mut d = KnowledgeGraph::new();
    let a = d.add_node("A", "", Origin::UserContributed, None).unwrap();
    let b = d.add_node("B", "", Origin::UserContributed, Some((a, "r"))).unwrap();
    let c = d.add_node("C", "", Origin::UserContributed, Some((a, "r"))).unwrap();
    let dd = d.add_node("D", "", Origin::UserContributed, Some((b, "r"))).unwrap();
    d.add_edge(c, dd, "r").unwrap();
    let pos = layout(&d, &cfg, LayoutMode::Full).unwrap();
    let depth = bfs_depths(&d);
    for (id, p) in &pos {
        assert_eq!(p.x, depth[id] as f64 * s);
    }
    assert_eq!(depth[&dd], 2);
    let boxes: Vec<&Position> = pos.values().collect();
    for (i, p) in boxes.iter().enumerate() {
        for q in &boxes[i + 1..] {
            let apart = (p.x - q.x).abs() >= cfg.box_width || (p.y - q.y).abs() >= cfg.box_height;
            assert!(apart);
        }
    }
}

#[test]
fn layout_keeps_dragged_positions_unless_full() {
    let cfg = LayoutConfig::default();
    let mut g = KnowledgeGraph::new();
    let a = g.add_node("A", "", Origin::UserContributed, None).unwrap();
    let b = g.add_node("B", "", Origin::UserContributed, Some((a, "r"))).unwrap();
    g.update_node(b, &NodePatch { position: Some(Position::new(999.0, 5.0)), ..Default::default() })
        .unwrap();
    assert_eq!(layout(&g, &cfg, LayoutMode::PreserveManual).unwrap()[&b], Position::new(999.0, 5.0));
    assert_eq!(layout(&g, &cfg, LayoutMode::Full).unwrap()[&b].x, cfg.column_spacing);
}

#[test]
fn fifty_node_round_trip() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
    let mut g = KnowledgeGraph::new();
    let mut ids = Vec::new();
    for i in 0..50 {
        let parent = (!ids.is_empty() && rng.random_bool(0.8)).then(|| ids[rng.random_range(0..ids.len())]);
        let id = g
            .add_node(&format!("Concept {i}"), &format!("detail \"{i}\"\nline"), Origin::DocumentDerived, parent.map(|p| (p, "has part")))
            .unwrap();
        ids.push(id);
    }
    for _ in 0..30 {
        let _ = g.add_edge(ids[rng.random_range(0..50)], ids[rng.random_range(0..50)], "links");
    }
    g.create_group(&ids[3..7]).unwrap();
    let text = g.serialize();
    assert_eq!(KnowledgeGraph::deserialize(&text).unwrap(), g);
    assert_eq!(KnowledgeGraph::deserialize(&KnowledgeGraph::new().serialize()).unwrap(), KnowledgeGraph::new());
    let truncated = &text[..text.len() / 2];
    assert!(matches!(KnowledgeGraph::deserialize(truncated), Err(GraphError::MalformedDocument(_))));
}

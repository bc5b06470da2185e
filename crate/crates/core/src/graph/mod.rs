//! The co-created knowledge graph.
//!
//! Nodes are concepts, edges are labeled parent→child relations. The edge set
//! forms a DAG: a node may have several parents ("common child" nodes) but no
//! edge may close a directed cycle. Every successful mutation bumps
//! [`KnowledgeGraph::revision`] by exactly one; failed mutations leave the
//! graph untouched.

mod anchor;
mod delta;
mod layout;
mod ops;
mod outline;
mod serial;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

pub use crate::ids::{EdgeId, GroupId, NodeId};
pub use anchor::{find_anchor, AnchorHit};
pub use delta::GraphDelta;
pub use layout::{layout, LayoutConfig, LayoutMode};
pub use ops::{resolve, AppliedOp, GraphOp, NodeRef, OpError, DEFAULT_LABEL};
pub use serial::GRAPH_FORMAT;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("node title must not be empty")]
    EmptyTitle,
    #[error("parent node {0} does not exist")]
    UnknownParent(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("an edge {parent} -> {child} already exists")]
    DuplicateEdge { parent: NodeId, child: NodeId },
    #[error("edge {parent} -> {child} would create a cycle")]
    WouldCreateCycle { parent: NodeId, child: NodeId },
    #[error("no edge {parent} -> {child}")]
    UnknownEdge { parent: NodeId, child: NodeId },
    #[error("patch changes nothing")]
    EmptyPatch,
    #[error("field '{0}' cannot be changed")]
    ImmutableField(String),
    #[error("group {0} does not exist")]
    UnknownGroup(GroupId),
    #[error("a group needs at least one member")]
    EmptyGroup,
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("malformed graph document: {0}")]
    MalformedDocument(String),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Where a node's content came from. Fixed at creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    DocumentDerived,
    UserContributed,
}

/// Canvas coordinates in abstract units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub title: String,
    pub detail: String,
    pub origin: Origin,
    pub starred: bool,
    pub position: Option<Position>,
    pub group: Option<GroupId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub parent: NodeId,
    pub child: NodeId,
    pub label: String,
}

/// Partial node update. `origin` is intentionally absent; unknown fields are
/// rejected when a patch arrives as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starred: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
}

impl NodePatch {
    pub fn is_empty(&self) -> bool {
        self.title.is_none() && self.detail.is_none() && self.starred.is_none() && self.position.is_none()
    }
}

/// What happens to the children of a deleted node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrphanPolicy {
    /// Children survive; only the edges to the deleted node go away.
    #[default]
    Detach,
    /// Descendants reachable only through the deleted node go too.
    Cascade,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeId, Edge>,
    groups: BTreeMap<GroupId, BTreeSet<NodeId>>,
    revision: u64,
    next_node: u64,
    next_edge: u64,
    next_group: u64,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    /// Edges in id order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn groups(&self) -> &BTreeMap<GroupId, BTreeSet<NodeId>> {
        &self.groups
    }

    pub fn edge_between(&self, parent: NodeId, child: NodeId) -> Option<&Edge> {
        self.edges
            .values()
            .find(|e| e.parent == parent && e.child == child)
    }

    /// Edges leaving `id`, in edge-id order.
    pub fn outgoing(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(move |e| e.parent == id)
    }

    /// Edges entering `id`, in edge-id order.
    pub fn incoming(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(move |e| e.child == id)
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.incoming(id).map(|e| e.parent).collect()
    }

    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        self.outgoing(id).map(|e| e.child).collect()
    }

    /// Nodes without parents, in id order.
    pub fn roots(&self) -> Vec<NodeId> {
        let with_parent: BTreeSet<NodeId> = self.edges.values().map(|e| e.child).collect();
        self.nodes
            .keys()
            .copied()
            .filter(|id| !with_parent.contains(id))
            .collect()
    }

    /// Nodes whose title equals `title` ignoring case and spacing, id order.
    pub fn nodes_titled(&self, title: &str) -> Vec<NodeId> {
        let wanted = crate::text::normalize_title(title);
        self.nodes
            .values()
            .filter(|n| crate::text::normalize_title(&n.title) == wanted)
            .map(|n| n.id)
            .collect()
    }

    /// Every node reachable from `start` by following edges forward,
    /// excluding `start` itself unless it lies on a cycle.
    pub fn descendants(&self, start: NodeId) -> BTreeSet<NodeId> {
        let children = self.child_lists();
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = children.get(&start).cloned().unwrap_or_default().into();
        while let Some(id) = queue.pop_front() {
            if seen.insert(id) {
                if let Some(next) = children.get(&id) {
                    queue.extend(next.iter().copied());
                }
            }
        }
        seen
    }

    fn child_lists(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut out: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for e in self.edges.values() {
            out.entry(e.parent).or_default().push(e.child);
        }
        out
    }

    /// Square adjacency view: `ids[i]` is the node for row/column `i`, and
    /// `cells[i][j]` holds the label of the edge `ids[i] -> ids[j]`.
    pub fn adjacency_matrix(&self) -> (Vec<NodeId>, Vec<Vec<Option<String>>>) {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut cells = vec![vec![None; ids.len()]; ids.len()];
        for e in self.edges.values() {
            cells[index[&e.parent]][index[&e.child]] = Some(e.label.clone());
        }
        (ids, cells)
    }

    fn bump(&mut self) {
        self.revision += 1;
    }

    /// Adds a node, optionally hanging it under `parent` with `label`.
    pub fn add_node(
        &mut self,
        title: &str,
        detail: &str,
        origin: Origin,
        parent: Option<(NodeId, &str)>,
    ) -> Result<NodeId> {
        let title = title.trim();
        if title.is_empty() {
            return Err(GraphError::EmptyTitle);
        }
        if let Some((p, _)) = parent {
            if !self.nodes.contains_key(&p) {
                return Err(GraphError::UnknownParent(p));
            }
        }
        self.next_node += 1;
        let id = NodeId(self.next_node);
        self.nodes.insert(
            id,
            Node {
                id,
                title: title.to_string(),
                detail: detail.trim().to_string(),
                origin,
                starred: false,
                position: None,
                group: None,
            },
        );
        if let Some((p, label)) = parent {
            self.insert_edge(p, id, label);
        }
        self.bump();
        Ok(id)
    }

    fn insert_edge(&mut self, parent: NodeId, child: NodeId, label: &str) -> EdgeId {
        self.next_edge += 1;
        let id = EdgeId(self.next_edge);
        self.edges.insert(
            id,
            Edge {
                id,
                parent,
                child,
                label: label.trim().to_string(),
            },
        );
        id
    }

    pub fn add_edge(&mut self, parent: NodeId, child: NodeId, label: &str) -> Result<EdgeId> {
        for id in [parent, child] {
            if !self.nodes.contains_key(&id) {
                return Err(GraphError::UnknownNode(id));
            }
        }
        if parent == child || self.descendants(child).contains(&parent) {
            return Err(GraphError::WouldCreateCycle { parent, child });
        }
        if self.edge_between(parent, child).is_some() {
            return Err(GraphError::DuplicateEdge { parent, child });
        }
        let id = self.insert_edge(parent, child, label);
        self.bump();
        Ok(id)
    }

    pub fn delete_edge(&mut self, parent: NodeId, child: NodeId) -> Result<EdgeId> {
        let id = self
            .edge_between(parent, child)
            .map(|e| e.id)
            .ok_or(GraphError::UnknownEdge { parent, child })?;
        self.edges.remove(&id);
        self.bump();
        Ok(id)
    }

    /// Removes `id` and its incident edges. Returns the removed node ids in
    /// id order.
    pub fn delete_node(&mut self, id: NodeId, policy: OrphanPolicy) -> Result<Vec<NodeId>> {
        if !self.nodes.contains_key(&id) {
            return Err(GraphError::UnknownNode(id));
        }
        let mut removed = BTreeSet::from([id]);
        if policy == OrphanPolicy::Cascade {
            let below = self.descendants(id);
            // Anything still reachable from another root without passing
            // through `id` survives.
            let children = self.child_lists();
            let mut alive = BTreeSet::new();
            let mut queue: VecDeque<NodeId> =
                self.roots().into_iter().filter(|r| *r != id).collect();
            while let Some(n) = queue.pop_front() {
                if n == id || !alive.insert(n) {
                    continue;
                }
                if let Some(next) = children.get(&n) {
                    queue.extend(next.iter().copied());
                }
            }
            removed.extend(below.into_iter().filter(|d| !alive.contains(d)));
        }
        self.edges
            .retain(|_, e| !removed.contains(&e.parent) && !removed.contains(&e.child));
        for n in &removed {
            if let Some(node) = self.nodes.remove(n) {
                if let Some(g) = node.group {
                    self.detach_from_group(g, *n);
                }
            }
        }
        self.bump();
        Ok(removed.into_iter().collect())
    }

    fn detach_from_group(&mut self, group: GroupId, node: NodeId) {
        if let Some(members) = self.groups.get_mut(&group) {
            members.remove(&node);
            if members.is_empty() {
                self.groups.remove(&group);
            }
        }
    }

    pub fn update_node(&mut self, id: NodeId, patch: &NodePatch) -> Result<()> {
        if patch.is_empty() {
            return Err(GraphError::EmptyPatch);
        }
        if matches!(&patch.title, Some(t) if t.trim().is_empty()) {
            return Err(GraphError::EmptyTitle);
        }
        let node = self.nodes.get_mut(&id).ok_or(GraphError::UnknownNode(id))?;
        if let Some(title) = &patch.title {
            node.title = title.trim().to_string();
        }
        if let Some(detail) = &patch.detail {
            node.detail = detail.trim().to_string();
        }
        if let Some(starred) = patch.starred {
            node.starred = starred;
        }
        if let Some(position) = patch.position {
            node.position = Some(position);
        }
        self.bump();
        Ok(())
    }

    /// Writes many positions as a single revision (used for re-layout).
    pub fn set_positions(&mut self, positions: &BTreeMap<NodeId, Position>) -> Result<()> {
        if let Some(missing) = positions.keys().find(|id| !self.nodes.contains_key(id)) {
            return Err(GraphError::UnknownNode(*missing));
        }
        for (id, pos) in positions {
            if let Some(node) = self.nodes.get_mut(id) {
                node.position = Some(*pos);
            }
        }
        self.bump();
        Ok(())
    }

    /// Groups `members`. A node already in another group moves to the new one.
    pub fn create_group(&mut self, members: &[NodeId]) -> Result<GroupId> {
        if members.is_empty() {
            return Err(GraphError::EmptyGroup);
        }
        if let Some(missing) = members.iter().find(|id| !self.nodes.contains_key(id)) {
            return Err(GraphError::UnknownNode(*missing));
        }
        self.next_group += 1;
        let gid = GroupId(self.next_group);
        for m in members {
            if let Some(old) = self.nodes[m].group {
                self.detach_from_group(old, *m);
            }
            if let Some(node) = self.nodes.get_mut(m) {
                node.group = Some(gid);
            }
        }
        self.groups.insert(gid, members.iter().copied().collect());
        self.bump();
        Ok(gid)
    }

    pub fn dissolve_group(&mut self, group: GroupId) -> Result<()> {
        let members = self.groups.remove(&group).ok_or(GraphError::UnknownGroup(group))?;
        for m in members {
            if let Some(node) = self.nodes.get_mut(&m) {
                node.group = None;
            }
        }
        self.bump();
        Ok(())
    }

    pub fn remove_from_group(&mut self, group: GroupId, node: NodeId) -> Result<()> {
        let members = self.groups.get(&group).ok_or(GraphError::UnknownGroup(group))?;
        if !members.contains(&node) {
            return Err(GraphError::UnknownNode(node));
        }
        self.detach_from_group(group, node);
        if let Some(n) = self.nodes.get_mut(&node) {
            n.group = None;
        }
        self.bump();
        Ok(())
    }

    /// Kahn's algorithm; `None` if the edge set has a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> = self.nodes.keys().map(|id| (*id, 0)).collect();
        for e in self.edges.values() {
            *indegree.get_mut(&e.child)? += 1;
        }
        let children = self.child_lists();
        let mut ready: VecDeque<NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_front() {
            order.push(id);
            for c in children.get(&id).into_iter().flatten() {
                let d = indegree.get_mut(c)?;
                *d -= 1;
                if *d == 0 {
                    ready.push_back(*c);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(g: &mut KnowledgeGraph, title: &str) -> NodeId {
        g.add_node(title, "", Origin::UserContributed, None).unwrap()
    }

    #[test]
    fn add_root_node_to_empty_graph() {
        let mut g = KnowledgeGraph::new();
        let id = user(&mut g, "Climate Change");
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.roots(), vec![id]);
        assert_eq!(g.revision(), 1);
    }

    #[test]
    fn add_node_under_parent_creates_labeled_edge() {
        let mut g = KnowledgeGraph::new();
        let ghg = user(&mut g, "Greenhouse Gas Emissions");
        let fin = g
            .add_node(
                "Financial Investment Relevance",
                "",
                Origin::UserContributed,
                Some((ghg, "is important for")),
            )
            .unwrap();
        let edge = g.edge_between(ghg, fin).unwrap();
        assert_eq!(edge.label, "is important for");
        assert_eq!(g.revision(), 2);
    }

    #[test]
    fn add_node_errors() {
        let mut g = KnowledgeGraph::new();
        assert_eq!(
            g.add_node("  ", "", Origin::UserContributed, None),
            Err(GraphError::EmptyTitle)
        );
        assert_eq!(
            g.add_node("x", "", Origin::UserContributed, Some((NodeId(9), "r"))),
            Err(GraphError::UnknownParent(NodeId(9)))
        );
        assert_eq!(g.revision(), 0);
    }

    #[test]
    fn common_child_with_two_parents() {
        let mut g = KnowledgeGraph::new();
        let causes = user(&mut g, "Causes of Climate Change");
        let bio = user(&mut g, "Biodiversity Loss");
        let defo = user(&mut g, "Deforestation");
        g.add_edge(causes, defo, "contributes to").unwrap();
        g.add_edge(bio, defo, "leads to").unwrap();
        assert_eq!(g.parents(defo), vec![causes, bio]);
    }

    #[test]
    fn two_cycle_and_self_loop_rejected() {
        let mut g = KnowledgeGraph::new();
        let a = user(&mut g, "A");
        let b = user(&mut g, "B");
        g.add_edge(a, b, "r").unwrap();
        let rev = g.revision();
        assert_eq!(
            g.add_edge(b, a, "r"),
            Err(GraphError::WouldCreateCycle { parent: b, child: a })
        );
        assert_eq!(
            g.add_edge(a, a, "r"),
            Err(GraphError::WouldCreateCycle { parent: a, child: a })
        );
        assert_eq!(g.add_edge(a, b, "other"), Err(GraphError::DuplicateEdge { parent: a, child: b }));
        assert_eq!(g.add_edge(a, NodeId(99), "r"), Err(GraphError::UnknownNode(NodeId(99))));
        assert_eq!(g.revision(), rev);
    }

    #[test]
    fn delete_leaf_under_either_policy() {
        for policy in [OrphanPolicy::Detach, OrphanPolicy::Cascade] {
            let mut g = KnowledgeGraph::new();
            let root = user(&mut g, "root");
            let leaf = g
                .add_node("leaf", "", Origin::UserContributed, Some((root, "has")))
                .unwrap();
            assert_eq!(g.delete_node(leaf, policy).unwrap(), vec![leaf]);
            assert_eq!(g.edge_count(), 0);
        }
    }

    #[test]
    fn ids_are_never_reused() {
        let mut g = KnowledgeGraph::new();
        let a = user(&mut g, "a");
        g.delete_node(a, OrphanPolicy::Detach).unwrap();
        let b = user(&mut g, "b");
        assert_ne!(a, b);
    }

    #[test]
    fn update_only_touches_patched_fields() {
        let mut g = KnowledgeGraph::new();
        let a = g.add_node("A", "detail", Origin::DocumentDerived, None).unwrap();
        let before = g.node(a).unwrap().clone();
        g.update_node(
            a,
            &NodePatch {
                starred: Some(true),
                ..Default::default()
            },
        )
        .unwrap();
        let after = g.node(a).unwrap();
        assert!(after.starred);
        assert_eq!(
            serde_json::to_string(&Node { starred: false, ..after.clone() }).unwrap(),
            serde_json::to_string(&before).unwrap()
        );
        assert_eq!(g.update_node(a, &NodePatch::default()), Err(GraphError::EmptyPatch));
        assert_eq!(
            g.update_node(NodeId(5), &NodePatch { starred: Some(true), ..Default::default() }),
            Err(GraphError::UnknownNode(NodeId(5)))
        );
    }

    #[test]
    fn origin_cannot_be_patched_through_json() {
        let err = serde_json::from_str::<NodePatch>(r#"{"origin":"user-contributed"}"#);
        assert!(err.is_err());
    }

    #[test]
    fn groups_track_membership() {
        let mut g = KnowledgeGraph::new();
        let a = user(&mut g, "a");
        let b = user(&mut g, "b");
        let g1 = g.create_group(&[a, b]).unwrap();
        assert_eq!(g.node(a).unwrap().group, Some(g1));
        g.remove_from_group(g1, a).unwrap();
        assert_eq!(g.node(a).unwrap().group, None);
        g.delete_node(b, OrphanPolicy::Detach).unwrap();
        assert!(g.groups().is_empty());
        assert_eq!(g.dissolve_group(g1), Err(GraphError::UnknownGroup(g1)));
    }

    #[test]
    fn adjacency_matrix_view() {
        let mut g = KnowledgeGraph::new();
        let a = user(&mut g, "a");
        let b = g.add_node("b", "", Origin::UserContributed, Some((a, "has"))).unwrap();
        let (ids, cells) = g.adjacency_matrix();
        assert_eq!(ids, vec![a, b]);
        assert_eq!(cells[0][1].as_deref(), Some("has"));
        assert_eq!(cells[1][0], None);
    }
}

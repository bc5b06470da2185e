use serde::{Deserialize, Serialize};

use super::{Edge, EdgeId, GraphError, GroupId, KnowledgeGraph, Node, NodeId, Result};

/// Structural difference between two revisions of one graph. Applying it to
/// a graph at `base_revision` reproduces the graph at `revision` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub base_revision: u64,
    pub revision: u64,
    pub upserted_nodes: Vec<Node>,
    pub removed_nodes: Vec<NodeId>,
    pub upserted_edges: Vec<Edge>,
    pub removed_edges: Vec<EdgeId>,
    /// Full group table, present only when membership changed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<(GroupId, Vec<NodeId>)>>,
    pub next_ids: [u64; 3],
}

impl GraphDelta {
    pub fn between(old: &KnowledgeGraph, new: &KnowledgeGraph) -> Self {
        let upserted_nodes = new
            .nodes
            .values()
            .filter(|n| old.nodes.get(&n.id) != Some(n))
            .cloned()
            .collect();
        let removed_nodes = old
            .nodes
            .keys()
            .filter(|id| !new.nodes.contains_key(id))
            .copied()
            .collect();
        let upserted_edges = new
            .edges
            .values()
            .filter(|e| old.edges.get(&e.id) != Some(e))
            .cloned()
            .collect();
        let removed_edges = old
            .edges
            .keys()
            .filter(|id| !new.edges.contains_key(id))
            .copied()
            .collect();
        let groups = (old.groups != new.groups).then(|| {
            new.groups
                .iter()
                .map(|(g, m)| (*g, m.iter().copied().collect()))
                .collect()
        });
        GraphDelta {
            base_revision: old.revision,
            revision: new.revision,
            upserted_nodes,
            removed_nodes,
            upserted_edges,
            removed_edges,
            groups,
            next_ids: [new.next_node, new.next_edge, new.next_group],
        }
    }

    /// True when nothing structural changed (revision may still differ).
    pub fn is_empty(&self) -> bool {
        self.upserted_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.upserted_edges.is_empty()
            && self.removed_edges.is_empty()
            && self.groups.is_none()
    }

    pub fn apply(&self, graph: &mut KnowledgeGraph) -> Result<()> {
        if graph.revision != self.base_revision {
            return Err(GraphError::MalformedDocument(format!(
                "delta expects revision {}, graph is at {}",
                self.base_revision, graph.revision
            )));
        }
        let mut next = graph.clone();
        for id in &self.removed_edges {
            next.edges.remove(id);
        }
        for id in &self.removed_nodes {
            next.nodes.remove(id);
        }
        for n in &self.upserted_nodes {
            next.nodes.insert(n.id, n.clone());
        }
        for e in &self.upserted_edges {
            next.edges.insert(e.id, e.clone());
        }
        if let Some(groups) = &self.groups {
            next.groups = groups
                .iter()
                .map(|(g, m)| (*g, m.iter().copied().collect()))
                .collect();
        }
        [next.next_node, next.next_edge, next.next_group] = self.next_ids;
        next.revision = self.revision;
        let dangling = next
            .edges
            .values()
            .any(|e| !next.nodes.contains_key(&e.parent) || !next.nodes.contains_key(&e.child));
        if dangling {
            return Err(GraphError::MalformedDocument("delta leaves a dangling edge".into()));
        }
        *graph = next;
        Ok(())
    }
}

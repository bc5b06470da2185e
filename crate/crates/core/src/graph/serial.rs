//! Canonical JSON form of a graph. Arrays are sorted by id and object keys
//! appear in declaration order, so equal graphs serialize to equal bytes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Edge, GraphError, GroupId, KnowledgeGraph, Node, NodeId, Result};

pub const GRAPH_FORMAT: &str = "cokg-graph/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    format: String,
    revision: u64,
    next_node: u64,
    next_edge: u64,
    next_group: u64,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    groups: Vec<GroupDocument>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupDocument {
    id: GroupId,
    members: Vec<NodeId>,
}

fn malformed(msg: impl Into<String>) -> GraphError {
    GraphError::MalformedDocument(msg.into())
}

impl KnowledgeGraph {
    fn to_document(&self) -> GraphDocument {
        GraphDocument {
            format: GRAPH_FORMAT.to_string(),
            revision: self.revision,
            next_node: self.next_node,
            next_edge: self.next_edge,
            next_group: self.next_group,
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
            groups: self
                .groups
                .iter()
                .map(|(id, members)| GroupDocument {
                    id: *id,
                    members: members.iter().copied().collect(),
                })
                .collect(),
        }
    }

    fn from_document(doc: GraphDocument) -> Result<Self> {
        if doc.format != GRAPH_FORMAT {
            return Err(malformed(format!("unsupported format '{}'", doc.format)));
        }
        let mut g = KnowledgeGraph {
            revision: doc.revision,
            next_node: doc.next_node,
            next_edge: doc.next_edge,
            next_group: doc.next_group,
            ..Default::default()
        };
        for node in doc.nodes {
            if node.title.trim().is_empty() {
                return Err(malformed(format!("node {} has an empty title", node.id)));
            }
            if node.id.0 == 0 || node.id.0 > g.next_node {
                return Err(malformed(format!("node id {} outside the allocated range", node.id)));
            }
            if g.nodes.insert(node.id, node.clone()).is_some() {
                return Err(malformed(format!("duplicate node {}", node.id)));
            }
        }
        let mut pairs = BTreeSet::new();
        for edge in doc.edges {
            if edge.id.0 == 0 || edge.id.0 > g.next_edge {
                return Err(malformed(format!("edge id {} outside the allocated range", edge.id)));
            }
            if !g.nodes.contains_key(&edge.parent) || !g.nodes.contains_key(&edge.child) {
                return Err(malformed(format!("edge {} has a dangling endpoint", edge.id)));
            }
            if edge.parent == edge.child || !pairs.insert((edge.parent, edge.child)) {
                return Err(malformed(format!("edge {} is a self-loop or duplicate", edge.id)));
            }
            if g.edges.insert(edge.id, edge.clone()).is_some() {
                return Err(malformed(format!("duplicate edge {}", edge.id)));
            }
        }
        let mut grouped: BTreeMap<NodeId, GroupId> = BTreeMap::new();
        for group in doc.groups {
            if group.id.0 == 0 || group.id.0 > g.next_group || group.members.is_empty() {
                return Err(malformed(format!("invalid group {}", group.id)));
            }
            for m in &group.members {
                if grouped.insert(*m, group.id).is_some() {
                    return Err(malformed(format!("node {m} belongs to two groups")));
                }
            }
            let members: BTreeSet<NodeId> = group.members.into_iter().collect();
            if g.groups.insert(group.id, members).is_some() {
                return Err(malformed(format!("duplicate group {}", group.id)));
            }
        }
        for node in g.nodes.values() {
            if node.group != grouped.get(&node.id).copied() {
                return Err(malformed(format!("node {} disagrees with group membership", node.id)));
            }
        }
        if grouped.keys().any(|id| !g.nodes.contains_key(id)) {
            return Err(malformed("group references an unknown node"));
        }
        if g.topological_order().is_none() {
            return Err(malformed("edges contain a cycle"));
        }
        Ok(g)
    }

    /// Canonical pretty-printed JSON, terminated by a newline.
    pub fn serialize(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.to_document())
            .expect("graph documents contain only serializable data");
        out.push('\n');
        out
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        Self::from_document(doc)
    }
}

impl Serialize for KnowledgeGraph {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KnowledgeGraph {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = GraphDocument::deserialize(deserializer)?;
        Self::from_document(doc).map_err(serde::de::Error::custom)
    }
}

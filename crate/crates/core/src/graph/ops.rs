use std::fmt;

use serde::{Deserialize, Serialize};

use super::{find_anchor, GraphError, KnowledgeGraph, NodeId, NodePatch, Origin, OrphanPolicy};

/// A node reference inside an op: either a node id (`n12`) or a title.
pub type NodeRef = String;

/// Label used when an op attaches a node without naming the relation.
pub const DEFAULT_LABEL: &str = "relates to";

/// One structural edit, with node references still unresolved. This is the
/// unit planned by the editing agent and posted by clients for direct
/// manipulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", deny_unknown_fields)]
pub enum GraphOp {
    AddNode {
        title: String,
        #[serde(default)]
        detail: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<NodeRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    AddEdge {
        parent: NodeRef,
        child: NodeRef,
        label: String,
    },
    DeleteNode {
        node: NodeRef,
        #[serde(default)]
        policy: OrphanPolicy,
    },
    UpdateNode {
        node: NodeRef,
        patch: NodePatch,
    },
    DeleteEdge {
        parent: NodeRef,
        child: NodeRef,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpError {
    #[error("node '{reference}' not found{}", closest_hint(.closest))]
    NodeNotFound { reference: String, closest: Vec<String> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn closest_hint(closest: &[String]) -> String {
    if closest.is_empty() {
        String::new()
    } else {
        let quoted: Vec<String> = closest.iter().map(|t| format!("'{t}'")).collect();
        format!("; closest existing nodes: {}", quoted.join(", "))
    }
}

/// Outcome of one applied op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedOp {
    pub op: GraphOp,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub created: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<NodeId>,
}

/// Resolves a reference: exact id first, then case-insensitive title (lowest
/// id wins among duplicates).
pub fn resolve(graph: &KnowledgeGraph, reference: &str) -> Result<NodeId, OpError> {
    let reference = reference.trim();
    if let Ok(id) = reference.parse::<NodeId>() {
        if graph.contains(id) {
            return Ok(id);
        }
    }
    if let Some(id) = graph.nodes_titled(reference).first() {
        return Ok(*id);
    }
    let closest = find_anchor(graph, reference)
        .into_iter()
        .take(3)
        .filter_map(|hit| graph.node(hit.node).map(|n| n.title.clone()))
        .collect();
    Err(OpError::NodeNotFound {
        reference: reference.to_string(),
        closest,
    })
}

fn title_of(graph: &KnowledgeGraph, id: NodeId) -> String {
    graph.node(id).map(|n| n.title.clone()).unwrap_or_else(|| id.to_string())
}

impl GraphOp {
    pub fn kind(&self) -> &'static str {
        match self {
            GraphOp::AddNode { .. } => "AddNode",
            GraphOp::AddEdge { .. } => "AddEdge",
            GraphOp::DeleteNode { .. } => "DeleteNode",
            GraphOp::UpdateNode { .. } => "UpdateNode",
            GraphOp::DeleteEdge { .. } => "DeleteEdge",
        }
    }

    /// Applies the op as one atomic graph mutation. New nodes get `origin`.
    pub fn apply(&self, graph: &mut KnowledgeGraph, origin: Origin) -> Result<AppliedOp, OpError> {
        let applied = |summary: String, created: Vec<NodeId>, removed: Vec<NodeId>| AppliedOp {
            op: self.clone(),
            summary,
            created,
            removed,
        };
        match self {
            GraphOp::AddNode { title, detail, parent, label } => {
                let parent = match parent {
                    Some(p) => Some(resolve(graph, p)?),
                    None if label.is_some() => {
                        return Err(OpError::InvalidArgument("label given without a parent".into()))
                    }
                    None => None,
                };
                let label = label.as_deref().unwrap_or(DEFAULT_LABEL);
                let id = graph.add_node(title, detail, origin, parent.map(|p| (p, label)))?;
                let summary = match parent {
                    Some(p) => format!(
                        "Added node '{}' under '{}' ({})",
                        title.trim(),
                        title_of(graph, p),
                        label
                    ),
                    None => format!("Added node '{}'", title.trim()),
                };
                Ok(applied(summary, vec![id], vec![]))
            }
            GraphOp::AddEdge { parent, child, label } => {
                let p = resolve(graph, parent)?;
                let c = resolve(graph, child)?;
                graph.add_edge(p, c, label)?;
                let summary = format!(
                    "Linked '{}' to '{}' ({})",
                    title_of(graph, p),
                    title_of(graph, c),
                    label.trim()
                );
                Ok(applied(summary, vec![], vec![]))
            }
            GraphOp::DeleteNode { node, policy } => {
                let id = resolve(graph, node)?;
                let title = title_of(graph, id);
                let removed = graph.delete_node(id, *policy)?;
                let summary = if removed.len() > 1 {
                    format!("Deleted node '{}' and {} descendant(s)", title, removed.len() - 1)
                } else {
                    format!("Deleted node '{title}'")
                };
                Ok(applied(summary, vec![], removed))
            }
            GraphOp::UpdateNode { node, patch } => {
                let id = resolve(graph, node)?;
                graph.update_node(id, patch)?;
                Ok(applied(format!("Updated node '{}'", title_of(graph, id)), vec![], vec![]))
            }
            GraphOp::DeleteEdge { parent, child } => {
                let p = resolve(graph, parent)?;
                let c = resolve(graph, child)?;
                graph.delete_edge(p, c)?;
                let summary = format!("Unlinked '{}' from '{}'", title_of(graph, c), title_of(graph, p));
                Ok(applied(summary, vec![], vec![]))
            }
        }
    }
}

fn quote(value: &str) -> String {
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for ch in value.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

/// Renders the op as one line of the plan language, e.g.
/// `AddEdge(parent="A", child="B", label="leads to")`.
impl fmt::Display for GraphOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut args: Vec<(&str, String)> = Vec::new();
        match self {
            GraphOp::AddNode { title, detail, parent, label } => {
                args.push(("title", title.clone()));
                if !detail.is_empty() {
                    args.push(("detail", detail.clone()));
                }
                if let Some(p) = parent {
                    args.push(("parent", p.clone()));
                }
                if let Some(l) = label {
                    args.push(("label", l.clone()));
                }
            }
            GraphOp::AddEdge { parent, child, label } => {
                args.push(("parent", parent.clone()));
                args.push(("child", child.clone()));
                args.push(("label", label.clone()));
            }
            GraphOp::DeleteNode { node, policy } => {
                args.push(("node", node.clone()));
                if *policy == OrphanPolicy::Cascade {
                    args.push(("policy", "cascade".into()));
                }
            }
            GraphOp::UpdateNode { node, patch } => {
                args.push(("node", node.clone()));
                if let Some(t) = &patch.title {
                    args.push(("title", t.clone()));
                }
                if let Some(d) = &patch.detail {
                    args.push(("detail", d.clone()));
                }
                if let Some(s) = patch.starred {
                    args.push(("starred", s.to_string()));
                }
                if let Some(p) = patch.position {
                    args.push(("position", format!("{},{}", p.x, p.y)));
                }
            }
            GraphOp::DeleteEdge { parent, child } => {
                args.push(("parent", parent.clone()));
                args.push(("child", child.clone()));
            }
        }
        let rendered: Vec<String> = args.iter().map(|(k, v)| format!("{k}={}", quote(v))).collect();
        write!(f, "{}({})", self.kind(), rendered.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_escapes_quotes() {
        let op = GraphOp::AddNode {
            title: "Say \"hi\"".into(),
            detail: String::new(),
            parent: Some("n1".into()),
            label: Some("greets".into()),
        };
        assert_eq!(
            op.to_string(),
            r#"AddNode(title="Say \"hi\"", parent="n1", label="greets")"#
        );
    }

    #[test]
    fn resolve_by_id_then_title() {
        let mut g = KnowledgeGraph::new();
        let a = g.add_node("Carbon Sinks", "", Origin::DocumentDerived, None).unwrap();
        assert_eq!(resolve(&g, "n1"), Ok(a));
        assert_eq!(resolve(&g, "carbon  sinks"), Ok(a));
        match resolve(&g, "Carbon Sink Policy") {
            Err(OpError::NodeNotFound { closest, .. }) => assert_eq!(closest, vec!["Carbon Sinks"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_rejects_origin_in_patch() {
        let bad = r#"{"op":"UpdateNode","node":"n1","patch":{"origin":"document-derived"}}"#;
        assert!(serde_json::from_str::<GraphOp>(bad).is_err());
        let good = r#"{"op":"UpdateNode","node":"n1","patch":{"starred":true}}"#;
        assert!(serde_json::from_str::<GraphOp>(good).is_ok());
    }

    #[test]
    fn label_without_parent_is_invalid() {
        let mut g = KnowledgeGraph::new();
        let op = GraphOp::AddNode {
            title: "x".into(),
            detail: String::new(),
            parent: None,
            label: Some("r".into()),
        };
        assert!(matches!(op.apply(&mut g, Origin::UserContributed), Err(OpError::InvalidArgument(_))));
        assert_eq!(g.revision(), 0);
    }
}

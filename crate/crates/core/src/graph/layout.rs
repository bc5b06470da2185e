use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{GraphError, KnowledgeGraph, NodeId, Position, Result};

/// Spacing for the horizontal hierarchical layout. Boxes never overlap as
/// long as the box fits inside one column/row cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub column_spacing: f64,
    pub row_spacing: f64,
    pub box_width: f64,
    pub box_height: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            column_spacing: 320.0,
            row_spacing: 120.0,
            box_width: 240.0,
            box_height: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutMode {
    /// Keep positions the user dragged; place only unpositioned nodes.
    #[default]
    PreserveManual,
    /// Recompute every node from the topology.
    Full,
}

/// Column index per node: roots are 0, every other node sits one column to
/// the right of its deepest parent.
pub(crate) fn depths(graph: &KnowledgeGraph) -> Result<BTreeMap<NodeId, usize>> {
    let order = graph.topological_order().ok_or(GraphError::CyclicGraph)?;
    let mut depth: BTreeMap<NodeId, usize> = BTreeMap::new();
    for id in order {
        let d = graph
            .incoming(id)
            .filter_map(|e| depth.get(&e.parent))
            .map(|d| d + 1)
            .max()
            .unwrap_or(0);
        depth.insert(id, d);
    }
    Ok(depth)
}

/// Breadth-first layout, roots on the left, children extending rightward.
/// Rows within a column follow breadth-first discovery order.
pub fn layout(
    graph: &KnowledgeGraph,
    config: &LayoutConfig,
    mode: LayoutMode,
) -> Result<BTreeMap<NodeId, Position>> {
    let depth = depths(graph)?;

    let mut discovered: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut queue: VecDeque<NodeId> = graph.roots().into();
    while let Some(id) = queue.pop_front() {
        if discovered.contains_key(&id) {
            continue;
        }
        let rank = discovered.len();
        discovered.insert(id, rank);
        queue.extend(graph.children(id));
    }

    let mut columns: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (id, d) in &depth {
        columns.entry(*d).or_default().push(*id);
    }
    let mut out = BTreeMap::new();
    for (col, mut ids) in columns {
        ids.sort_by_key(|id| (discovered[id], *id));
        for (row, id) in ids.into_iter().enumerate() {
            let computed = Position::new(col as f64 * config.column_spacing, row as f64 * config.row_spacing);
            let pos = match (mode, graph.node(id).and_then(|n| n.position)) {
                (LayoutMode::PreserveManual, Some(manual)) => manual,
                _ => computed,
            };
            out.insert(id, pos);
        }
    }
    Ok(out)
}

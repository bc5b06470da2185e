//! Client-side model of the graph canvas. Nothing here mutates the graph:
//! every button, widget and drag turns into an [`ApiRequest`] for the
//! service, and the canvas redraws only from what the service sends back.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use cokg_core::graph::{layout, GraphDelta, GroupId, KnowledgeGraph, LayoutConfig, LayoutMode, NodeId, Position};

/// Below this zoom level nodes show their titles only.
pub const DETAIL_ZOOM: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewState {
    pub zoom: f64,
    pub pan: Position,
    pub selected: Option<NodeId>,
}

impl Default for ViewState {
    fn default() -> Self {
        Self {
            zoom: 1.0,
            pan: Position::new(0.0, 0.0),
            selected: None,
        }
    }
}

impl ViewState {
    pub fn to_screen(&self, p: Position) -> Position {
        Position::new(p.x * self.zoom + self.pan.x, p.y * self.zoom + self.pan.y)
    }

    pub fn to_canvas(&self, p: Position) -> Position {
        let zoom = if self.zoom == 0.0 { 1.0 } else { self.zoom };
        Position::new((p.x - self.pan.x) / zoom, (p.y - self.pan.y) / zoom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneNode {
    pub id: NodeId,
    pub title: String,
    /// Absent when zoomed out past [`DETAIL_ZOOM`].
    pub detail: Option<String>,
    pub at: Position,
    pub highlighted: bool,
    pub selected: bool,
    pub group: Option<GroupId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneEdge {
    pub parent: NodeId,
    pub child: NodeId,
    pub label: String,
    pub from: Position,
    pub to: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub revision: u64,
    pub nodes: Vec<SceneNode>,
    pub edges: Vec<SceneEdge>,
}

/// Draws the graph in screen coordinates. Nodes the service has not placed
/// yet get a provisional slot from the same breadth-first layout the
/// service uses; that slot is display-only.
pub fn render_graph(graph: &KnowledgeGraph, view: &ViewState) -> Scene {
    let provisional = layout(graph, &LayoutConfig::default(), LayoutMode::PreserveManual).unwrap_or_default();
    let mut at: BTreeMap<NodeId, Position> = BTreeMap::new();
    let nodes = graph
        .nodes()
        .map(|n| {
            let canvas = n
                .position
                .or_else(|| provisional.get(&n.id).copied())
                .unwrap_or(Position::new(0.0, 0.0));
            let screen = view.to_screen(canvas);
            at.insert(n.id, screen);
            SceneNode {
                id: n.id,
                title: n.title.clone(),
                detail: (view.zoom >= DETAIL_ZOOM && !n.detail.is_empty()).then(|| n.detail.clone()),
                at: screen,
                highlighted: n.starred,
                selected: view.selected == Some(n.id),
                group: n.group,
            }
        })
        .collect();
    let edges = graph
        .edges()
        .map(|e| SceneEdge {
            parent: e.parent,
            child: e.child,
            label: e.label.clone(),
            from: at[&e.parent],
            to: at[&e.child],
        })
        .collect();
    Scene {
        revision: graph.revision(),
        nodes,
        edges,
    }
}

/// One call to the service.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiRequest {
    pub method: &'static str,
    pub path: String,
    pub body: Option<Value>,
}

impl ApiRequest {
    fn get(path: String) -> Self {
        Self { method: "GET", path, body: None }
    }

    fn post(path: String, body: Value) -> Self {
        Self {
            method: "POST",
            path,
            body: Some(body),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ToolbarButton {
    Plus,
    Delete,
    Suggest,
    Star,
}

impl ToolbarButton {
    pub const ALL: [ToolbarButton; 4] = [ToolbarButton::Plus, ToolbarButton::Delete, ToolbarButton::Suggest, ToolbarButton::Star];

    /// The plus button expands the node.
    pub fn request(self, session: &str, node: NodeId) -> ApiRequest {
        let action = match self {
            ToolbarButton::Plus => "expand",
            ToolbarButton::Delete => "delete",
            ToolbarButton::Suggest => "suggest",
            ToolbarButton::Star => "star",
        };
        ApiRequest::post(format!("/sessions/{session}/nodes/{node}/actions"), json!({ "action": action }))
    }
}

/// Buttons shown when `node` is selected.
pub fn node_toolbar(_node: NodeId) -> [ToolbarButton; 4] {
    ToolbarButton::ALL
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Widget {
    CreateNode { title: String },
    Group { members: Vec<NodeId> },
    Ungroup { group: GroupId },
    Rearrange,
}

impl Widget {
    pub fn request(&self, session: &str, base_revision: u64) -> ApiRequest {
        match self {
            Widget::CreateNode { title } => ApiRequest::post(
                format!("/sessions/{session}/ops"),
                json!({ "base_revision": base_revision, "ops": [{ "op": "AddNode", "title": title }] }),
            ),
            Widget::Group { members } => {
                ApiRequest::post(format!("/sessions/{session}/groups"), json!({ "members": members }))
            }
            Widget::Ungroup { group } => ApiRequest {
                method: "DELETE",
                path: format!("/sessions/{session}/groups/{group}"),
                body: None,
            },
            // Recomputes every position, manual ones included.
            Widget::Rearrange => ApiRequest::post(
                format!("/sessions/{session}/layout"),
                json!({ "mode": "full", "since": base_revision }),
            ),
        }
    }
}

/// Drop of a dragged node at screen point `to`.
pub fn drag_node(session: &str, node: NodeId, to: Position, view: &ViewState, base_revision: u64) -> ApiRequest {
    let p = view.to_canvas(to);
    ApiRequest::post(
        format!("/sessions/{session}/ops"),
        json!({
            "base_revision": base_revision,
            "ops": [{ "op": "UpdateNode", "node": node, "patch": { "position": { "x": p.x, "y": p.y } } }]
        }),
    )
}

pub fn chat_request(session: &str, input: &str, focus: Option<NodeId>, since: u64) -> ApiRequest {
    let mut body = json!({ "input": input, "since": since });
    if let Some(f) = focus {
        body["focus_node"] = json!(f);
    }
    ApiRequest::post(format!("/sessions/{session}/chat"), body)
}

pub fn upload_request(session: &str, title: Option<&str>, text: &str) -> ApiRequest {
    ApiRequest::post(format!("/sessions/{session}/documents"), json!({ "title": title, "text": text }))
}

pub fn accept_request(session: &str, node: NodeId, topic: &str, since: u64) -> ApiRequest {
    ApiRequest::post(
        format!("/sessions/{session}/nodes/{node}/suggestions/accept"),
        json!({ "topic": topic, "since": since }),
    )
}

/// Poll for changes since the mirror's revision, or the full graph.
pub fn poll_request(session: &str, since: Option<u64>) -> ApiRequest {
    match since {
        Some(rev) => ApiRequest::get(format!("/sessions/{session}/graph?since={rev}")),
        None => ApiRequest::get(format!("/sessions/{session}/graph")),
    }
}

/// The graph part of a service response.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GraphUpdate {
    pub revision: u64,
    #[serde(default)]
    pub graph: Option<KnowledgeGraph>,
    #[serde(default)]
    pub delta: Option<GraphDelta>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MirrorError {
    #[error("update is based on revision {base}, mirror is at {local}; refetch the full graph")]
    OutOfSync { base: u64, local: u64 },
    #[error("update carries neither a graph nor a delta")]
    Empty,
    #[error("delta did not apply: {0}")]
    Apply(String),
}

/// Local copy of the service graph, advanced only by service responses.
#[derive(Debug, Clone, Default)]
pub struct Mirror {
    graph: KnowledgeGraph,
}

impl Mirror {
    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn revision(&self) -> u64 {
        self.graph.revision()
    }

    /// A stale delta is skipped. A delta from a revision the mirror never
    /// saw is an error; the caller refetches with `poll_request(_, None)`.
    pub fn apply(&mut self, update: &GraphUpdate) -> Result<(), MirrorError> {
        if let Some(full) = &update.graph {
            if full.revision() >= self.revision() {
                self.graph = full.clone();
            }
            return Ok(());
        }
        let delta = update.delta.as_ref().ok_or(MirrorError::Empty)?;
        if delta.revision <= self.revision() {
            return Ok(());
        }
        if delta.base_revision != self.revision() {
            return Err(MirrorError::OutOfSync {
                base: delta.base_revision,
                local: self.revision(),
            });
        }
        delta.apply(&mut self.graph).map_err(|e| MirrorError::Apply(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct Chip {
    pub topic: String,
    pub description: String,
    pub relationship: String,
}

/// Every suggestion the service returned, in order.
pub fn suggestion_chips(response: &Value) -> Vec<Chip> {
    response["suggestions"]
        .as_array()
        .map(|items| items.iter().filter_map(|v| serde_json::from_value(v.clone()).ok()).collect())
        .unwrap_or_default()
}

/// Text for an error toast, naming the failed stage when the service gave one.
pub fn toast(status: u16, body: &Value) -> String {
    let message = body["error"].as_str().unwrap_or("request failed");
    match body["stage"].as_str() {
        Some(stage) => format!("Error {status} during {stage}: {message}"),
        None => format!("Error {status}: {message}"),
    }
}

//! HTTP service over the knowledge-graph engine.
//!
//! Each session is guarded by a fair async mutex; every request for a
//! session (chat, direct ops, uploads, reads) queues on it, so requests run
//! one at a time in arrival order. Engine work runs on the blocking pool.

mod error;
pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use cokg_core::graph::{GraphDelta, GraphOp, GroupId, KnowledgeGraph, LayoutMode, NodeId};
use cokg_core::ingest::parse_upload;
use cokg_core::map_manager::OpLog;
use cokg_core::oracle::{Intent, Suggestion};
use cokg_core::retriever::SourceRef;
use cokg_core::session::{Engine, NodeAction, Session};

pub use error::ApiError;

/// Graph revisions kept per session for computing deltas.
const SNAPSHOTS: usize = 64;

struct SessionEntry {
    session: Session,
    snapshots: BTreeMap<u64, KnowledgeGraph>,
}

impl SessionEntry {
    fn new(session: Session) -> Self {
        let mut entry = Self {
            session,
            snapshots: BTreeMap::new(),
        };
        entry.remember();
        entry
    }

    fn remember(&mut self) {
        let revision = self.session.graph.revision();
        self.snapshots
            .entry(revision)
            .or_insert_with(|| self.session.graph.clone());
        while self.snapshots.len() > SNAPSHOTS {
            self.snapshots.pop_first();
        }
    }

    /// The change since `since` when that revision is still known, the full
    /// graph otherwise.
    fn view(&self, since: Option<u64>) -> GraphView {
        let graph = &self.session.graph;
        let delta = since
            .and_then(|rev| self.snapshots.get(&rev))
            .map(|old| GraphDelta::between(old, graph));
        GraphView {
            revision: graph.revision(),
            graph: delta.is_none().then(|| graph.clone()),
            delta,
        }
    }
}

type Slot = Arc<Mutex<SessionEntry>>;

pub struct AppState {
    engine: Arc<Engine>,
    sessions: RwLock<HashMap<String, Slot>>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Engine, data_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            engine: Arc::new(engine),
            sessions: RwLock::new(HashMap::new()),
            data_dir,
        })
    }

    fn path_of(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }

    /// The in-memory session, or the saved one from the data directory.
    fn slot(&self, id: &str) -> Result<Slot, ApiError> {
        if let Some(slot) = self.sessions.read().expect("sessions lock").get(id) {
            return Ok(slot.clone());
        }
        let missing = || ApiError::not_found(format!("session '{id}' does not exist"));
        if !Self::valid_id(id) {
            return Err(missing());
        }
        let path = self.path_of(id).filter(|p| p.exists()).ok_or_else(missing)?;
        let session = Session::load(&path)?;
        let mut sessions = self.sessions.write().expect("sessions lock");
        let slot = sessions
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(SessionEntry::new(session))));
        Ok(slot.clone())
    }

    fn create(&self) -> (String, Slot) {
        let mut sessions = self.sessions.write().expect("sessions lock");
        let mut n = sessions.len() as u64 + 1;
        let id = loop {
            let id = format!("s{n}");
            let on_disk = self.path_of(&id).is_some_and(|p| p.exists());
            if !sessions.contains_key(&id) && !on_disk {
                break id;
            }
            n += 1;
        };
        let slot = Arc::new(Mutex::new(SessionEntry::new(self.engine.new_session(id.clone()))));
        sessions.insert(id.clone(), slot.clone());
        (id, slot)
    }

    /// Queues `f` on the session and runs it on the blocking pool. When
    /// `persist` is set and a data directory is configured, the session is
    /// saved before the lock is released.
    async fn run<T, F>(self: &Arc<Self>, id: &str, persist: bool, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Engine, &mut SessionEntry) -> Result<T, ApiError> + Send + 'static,
    {
        let slot = self.slot(id)?;
        let mut guard = slot.lock_owned().await;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let result = f(&state.engine, &mut guard);
            guard.remember();
            if persist {
                if let Some(path) = state.path_of(&guard.session.id) {
                    guard.session.save(&path)?;
                }
            }
            result
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub revision: u64,
    /// Full graph, sent when the client's revision is unknown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<KnowledgeGraph>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<GraphDelta>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
    pub revision: u64,
}

#[derive(Debug, Deserialize)]
pub struct UploadRequest {
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub doc_id: String,
    pub title: String,
    pub chunks: usize,
    pub tree_nodes: usize,
}

#[derive(Debug, Deserialize)]
pub struct SinceQuery {
    pub since: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    pub input: String,
    #[serde(default)]
    pub focus_node: Option<NodeId>,
    #[serde(default)]
    pub since: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub chat: String,
    pub intent: Option<Intent>,
    pub sources: Vec<SourceRef>,
    pub applied: Vec<String>,
    pub graph: GraphView,
}

#[derive(Debug, Deserialize)]
pub struct ActionRequest {
    pub action: NodeAction,
    #[serde(default)]
    pub since: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActionResponse {
    pub action: NodeAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat: Option<String>,
    pub suggestions: Vec<Suggestion>,
    pub graph: GraphView,
}

#[derive(Debug, Deserialize)]
pub struct AcceptRequest {
    pub topic: String,
    #[serde(default)]
    pub since: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct OpsRequest {
    pub base_revision: u64,
    pub ops: Vec<GraphOp>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OpsResponse {
    pub applied: Vec<String>,
    pub graph: GraphView,
}

#[derive(Debug, Default, Deserialize)]
pub struct LayoutRequest {
    #[serde(default)]
    pub mode: LayoutMode,
    #[serde(default)]
    pub since: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct GroupRequest {
    pub members: Vec<NodeId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroupResponse {
    pub group: GroupId,
    pub graph: GraphView,
}

#[derive(Debug, Deserialize)]
pub struct LoadRequest {
    pub id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SavedResponse {
    pub id: String,
    pub revision: u64,
    pub path: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let (id, slot) = state.create();
    if let Some(path) = state.path_of(&id) {
        let guard = slot.lock().await;
        guard.session.save(&path)?;
    }
    Ok((StatusCode::CREATED, Json(CreatedSession { id, revision: 0 })))
}

async fn upload_document(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<UploadRequest>,
) -> Result<Json<UploadResponse>, ApiError> {
    let response = state
        .run(&id, true, move |engine, entry| {
            let upload = parse_upload(&req.text, req.title.as_deref().unwrap_or("Untitled"));
            let title = upload.title.clone();
            let report = engine.upload(&mut entry.session, upload)?;
            Ok(UploadResponse {
                doc_id: report.doc_id.to_string(),
                title,
                chunks: report.chunks,
                tree_nodes: entry.session.tree.len(),
            })
        })
        .await?;
    Ok(Json(response))
}

async fn get_graph(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<SinceQuery>,
) -> Result<Json<GraphView>, ApiError> {
    let view = state.run(&id, false, move |_, entry| Ok(entry.view(query.since))).await?;
    Ok(Json(view))
}

async fn get_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<OpLog>, ApiError> {
    let log = state
        .run(&id, false, |_, entry| Ok(entry.session.op_log.clone()))
        .await?;
    Ok(Json(log))
}

async fn post_chat(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ChatRequest>,
) -> Result<Json<ChatResponse>, ApiError> {
    let response = state
        .run(&id, true, move |engine, entry| {
            let base = req.since.unwrap_or(entry.session.graph.revision());
            let reply = engine.chat(&mut entry.session, &req.input, req.focus_node)?;
            Ok(ChatResponse {
                chat: reply.chat,
                intent: reply.intent,
                sources: reply.sources,
                applied: reply.applied.iter().map(|a| a.op.to_string()).collect(),
                graph: entry.view(Some(base)),
            })
        })
        .await?;
    Ok(Json(response))
}

async fn node_action(
    State(state): State<Arc<AppState>>,
    Path((id, node)): Path<(String, String)>,
    Json(req): Json<ActionRequest>,
) -> Result<Json<ActionResponse>, ApiError> {
    let node = parse_node(&node)?;
    let response = state
        .run(&id, true, move |engine, entry| {
            let base = req.since.unwrap_or(entry.session.graph.revision());
            let reply = engine.node_action(&mut entry.session, node, req.action)?;
            Ok(ActionResponse {
                action: reply.action,
                chat: reply.chat,
                suggestions: reply.suggestions,
                graph: entry.view(Some(base)),
            })
        })
        .await?;
    Ok(Json(response))
}

async fn accept_suggestion(
    State(state): State<Arc<AppState>>,
    Path((id, node)): Path<(String, String)>,
    Json(req): Json<AcceptRequest>,
) -> Result<Json<GraphView>, ApiError> {
    let node = parse_node(&node)?;
    let view = state
        .run(&id, true, move |engine, entry| {
            let base = req.since.unwrap_or(entry.session.graph.revision());
            engine.accept_suggestion(&mut entry.session, node, &req.topic)?;
            Ok(entry.view(Some(base)))
        })
        .await?;
    Ok(Json(view))
}

async fn apply_ops(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<OpsRequest>,
) -> Result<Json<OpsResponse>, ApiError> {
    let response = state
        .run(&id, true, move |engine, entry| {
            let (applied, _) = engine.apply_ops(&mut entry.session, req.base_revision, &req.ops)?;
            Ok(OpsResponse {
                applied: applied.into_iter().map(|a| a.summary).collect(),
                graph: entry.view(Some(req.base_revision)),
            })
        })
        .await?;
    Ok(Json(response))
}

async fn rearrange(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<LayoutRequest>>,
) -> Result<Json<GraphView>, ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let view = state
        .run(&id, true, move |engine, entry| {
            let base = req.since.unwrap_or(entry.session.graph.revision());
            engine.rearrange(&mut entry.session, req.mode)?;
            Ok(entry.view(Some(base)))
        })
        .await?;
    Ok(Json(view))
}

async fn create_group(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<GroupRequest>,
) -> Result<(StatusCode, Json<GroupResponse>), ApiError> {
    let response = state
        .run(&id, true, move |engine, entry| {
            let base = entry.session.graph.revision();
            let (group, _) = engine.create_group(&mut entry.session, &req.members)?;
            Ok(GroupResponse {
                group,
                graph: entry.view(Some(base)),
            })
        })
        .await?;
    Ok((StatusCode::CREATED, Json(response)))
}

async fn dissolve_group(
    State(state): State<Arc<AppState>>,
    Path((id, group)): Path<(String, String)>,
) -> Result<Json<GraphView>, ApiError> {
    let group = parse_group(&group)?;
    let view = state
        .run(&id, true, move |engine, entry| {
            let base = entry.session.graph.revision();
            engine.dissolve_group(&mut entry.session, group)?;
            Ok(entry.view(Some(base)))
        })
        .await?;
    Ok(Json(view))
}

async fn remove_member(
    State(state): State<Arc<AppState>>,
    Path((id, group, node)): Path<(String, String, String)>,
) -> Result<Json<GraphView>, ApiError> {
    let group = parse_group(&group)?;
    let node = parse_node(&node)?;
    let view = state
        .run(&id, true, move |engine, entry| {
            let base = entry.session.graph.revision();
            engine.remove_from_group(&mut entry.session, group, node)?;
            Ok(entry.view(Some(base)))
        })
        .await?;
    Ok(Json(view))
}

async fn save_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SavedResponse>, ApiError> {
    let dir = state.data_dir.clone();
    let response = state
        .run(&id, true, move |_, entry| {
            Ok(SavedResponse {
                id: entry.session.id.clone(),
                revision: entry.session.graph.revision(),
                path: dir.map(|d| d.join(format!("{}.json", entry.session.id)).display().to_string()),
            })
        })
        .await?;
    if response.path.is_none() {
        return Err(ApiError::unprocessable("the server has no data directory"));
    }
    Ok(Json(response))
}

/// Reloads a session from disk, discarding the in-memory copy.
async fn load_session(State(state): State<Arc<AppState>>, Json(req): Json<LoadRequest>) -> Result<Json<SavedResponse>, ApiError> {
    if !AppState::valid_id(&req.id) {
        return Err(ApiError::not_found(format!("session '{}' does not exist", req.id)));
    }
    let path = state
        .path_of(&req.id)
        .filter(|p| p.exists())
        .ok_or_else(|| ApiError::not_found(format!("no saved session '{}'", req.id)))?;
    let existing = state.sessions.read().expect("sessions lock").get(&req.id).cloned();
    let session = {
        let path = path.clone();
        tokio::task::spawn_blocking(move || Session::load(&path))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??
    };
    let revision = session.graph.revision();
    match existing {
        Some(slot) => {
            let mut guard = slot.lock().await;
            *guard = SessionEntry::new(session);
        }
        None => {
            state
                .sessions
                .write()
                .expect("sessions lock")
                .insert(req.id.clone(), Arc::new(Mutex::new(SessionEntry::new(session))));
        }
    }
    Ok(Json(SavedResponse {
        id: req.id,
        revision,
        path: Some(path.display().to_string()),
    }))
}

async fn export_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    let session = state.run(&id, false, |_, entry| Ok(entry.session.clone())).await?;
    Ok(Json(session))
}

fn parse_node(text: &str) -> Result<NodeId, ApiError> {
    text.parse()
        .map_err(|_| ApiError::not_found(format!("node '{text}' does not exist")))
}

fn parse_group(text: &str) -> Result<GroupId, ApiError> {
    text.parse()
        .map_err(|_| ApiError::not_found(format!("group '{text}' does not exist")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/load", post(load_session))
        .route("/sessions/{id}", get(export_session))
        .route("/sessions/{id}/save", post(save_session))
        .route("/sessions/{id}/documents", post(upload_document))
        .route("/sessions/{id}/graph", get(get_graph))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/chat", post(post_chat))
        .route("/sessions/{id}/ops", post(apply_ops))
        .route("/sessions/{id}/layout", post(rearrange))
        .route("/sessions/{id}/groups", post(create_group))
        .route("/sessions/{id}/groups/{group}", delete(dissolve_group))
        .route("/sessions/{id}/groups/{group}/members/{node}", delete(remove_member))
        .route("/sessions/{id}/nodes/{node}/actions", post(node_action))
        .route("/sessions/{id}/nodes/{node}/suggestions/accept", post(accept_suggestion))
        .with_state(state)
}

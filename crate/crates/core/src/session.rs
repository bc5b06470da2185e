//! Session state and the engine that drives every request against it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{
    layout, AppliedOp, GraphDelta, GraphError, GraphOp, GroupId, KnowledgeGraph, LayoutConfig, LayoutMode, NodeId,
    NodePatch, OpError, Origin, OrphanPolicy,
};
use crate::history::{ChatHistory, Role, DEFAULT_WINDOW};
use crate::ingest::{ChunkConfig, DocumentStore, IngestError, IngestReport, Upload};
use crate::map_manager::{FailureInjector, MapError, MapManager, MapManagerConfig, OpLog, OpLogEntry};
use crate::oracle::{self, Category, Intent, OracleError, Suggestion};
use crate::provider::{ProviderError, SharedModel, Stage};
use crate::raptor::{build_tree, ChunkTree, ClusterConfig, Granularity, TreeError};
use crate::retriever::{self, RetrieveError, RetrieverConfig, SourceRef, REFUSAL};

pub const SESSION_FORMAT: &str = "cokg-session/1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("group {0} does not exist")]
    UnknownGroup(GroupId),
    #[error("graph is at revision {actual}, request was based on {expected}")]
    StaleRevision { expected: u64, actual: u64 },
    #[error("op {index} rejected: {error}")]
    InvalidOp { index: usize, error: OpError },
    #[error("{0}")]
    Invalid(String),
    #[error("{stage} failed: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("storage error: {0}")]
    Storage(String),
}

impl From<IngestError> for EngineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::EmbeddingFailure(source) => EngineError::Provider {
                stage: Stage::Embed,
                source,
            },
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<TreeError> for EngineError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::EmbeddingFailure(source) => EngineError::Provider {
                stage: Stage::Embed,
                source,
            },
            TreeError::SummaryFailure(source) => EngineError::Provider {
                stage: Stage::Summarize,
                source,
            },
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<OracleError> for EngineError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Provider { stage, source } => EngineError::Provider { stage, source },
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<GraphError> for EngineError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownNode(id) | GraphError::UnknownParent(id) => EngineError::UnknownNode(id),
            GraphError::UnknownGroup(id) => EngineError::UnknownGroup(id),
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

/// Everything one user works with. Serialized as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub format: String,
    pub id: String,
    pub graph: KnowledgeGraph,
    pub store: DocumentStore,
    pub tree: ChunkTree,
    pub history: ChatHistory,
    /// Suggestions already offered, per node.
    #[serde(default)]
    pub suggestions: BTreeMap<NodeId, Vec<Suggestion>>,
    #[serde(default)]
    pub op_log: OpLog,
}

impl Session {
    pub fn new(id: impl Into<String>, history_window: usize) -> Self {
        Self {
            format: SESSION_FORMAT.to_string(),
            id: id.into(),
            graph: KnowledgeGraph::new(),
            store: DocumentStore::new(),
            tree: ChunkTree::default(),
            history: ChatHistory::new(history_window),
            suggestions: BTreeMap::new(),
            op_log: OpLog::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("session serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let session: Session = serde_json::from_str(text).map_err(|e| EngineError::Storage(e.to_string()))?;
        if session.format != SESSION_FORMAT {
            return Err(EngineError::Storage(format!("unsupported session format '{}'", session.format)));
        }
        Ok(session)
    }

    /// Writes to a temporary file next to `path`, syncs it and renames it
    /// over `path`, so a crash leaves either the old or the new document.
    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        let storage = |e: std::io::Error| EngineError::Storage(e.to_string());
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(storage)?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("session.json");
        let tmp = dir.join(format!(".{name}.tmp"));
        {
            let mut file = fs::File::create(&tmp).map_err(storage)?;
            file.write_all(self.to_json().as_bytes()).map_err(storage)?;
            file.sync_all().map_err(storage)?;
        }
        fs::rename(&tmp, path).map_err(storage)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path).map_err(|e| EngineError::Storage(e.to_string()))?;
        Self::from_json(&text)
    }

    fn require_node(&self, node: NodeId) -> Result<(), EngineError> {
        if self.graph.contains(node) {
            Ok(())
        } else {
            Err(EngineError::UnknownNode(node))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub chunk: ChunkConfig,
    pub cluster: ClusterConfig,
    pub retriever: RetrieverConfig,
    pub map_manager: MapManagerConfig,
    pub history_window: usize,
    /// Chunks retrieved as document context for suggestions.
    pub suggestion_context: usize,
    pub layout: LayoutConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            chunk: ChunkConfig::default(),
            cluster: ClusterConfig::default(),
            retriever: RetrieverConfig::default(),
            map_manager: MapManagerConfig::default(),
            history_window: DEFAULT_WINDOW,
            suggestion_context: 4,
            layout: LayoutConfig::default(),
        }
    }
}

/// Reply to one chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResponse {
    pub chat: String,
    pub intent: Option<Intent>,
    pub applied: Vec<AppliedOp>,
    pub sources: Vec<SourceRef>,
    /// Graph changes made while handling the message.
    pub delta: GraphDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeAction {
    Expand,
    Suggest,
    Delete,
    Star,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResponse {
    pub action: NodeAction,
    pub chat: Option<String>,
    pub suggestions: Vec<Suggestion>,
    pub delta: GraphDelta,
}

pub struct Engine {
    pub model: SharedModel,
    pub config: EngineConfig,
    pub injector: Option<Arc<FailureInjector>>,
}

impl Engine {
    pub fn new(model: SharedModel, config: EngineConfig) -> Self {
        Self {
            model,
            config,
            injector: None,
        }
    }

    pub fn with_injector(mut self, injector: Arc<FailureInjector>) -> Self {
        self.injector = Some(injector);
        self
    }

    pub fn new_session(&self, id: impl Into<String>) -> Session {
        Session::new(id, self.config.history_window)
    }

    fn manager(&self) -> MapManager<'_> {
        let manager = MapManager::new(self.model.as_ref(), &self.config.map_manager);
        match &self.injector {
            Some(injector) => manager.with_injector(injector),
            None => manager,
        }
    }

    /// Ingests a document and rebuilds the retrieval tree over all chunks.
    /// On failure the session is unchanged.
    pub fn upload(&self, session: &mut Session, upload: Upload) -> Result<IngestReport, EngineError> {
        let mut store = session.store.clone();
        let report = store.ingest(self.model.as_ref(), upload, &self.config.chunk)?;
        let chunks: Vec<_> = store.chunks().cloned().collect();
        let tree = build_tree(&chunks, self.model.as_ref(), &self.config.cluster)?;
        session.store = store;
        session.tree = tree;
        Ok(report)
    }

    /// Handles one chat message: classify, then answer (and grow the graph)
    /// or edit the graph. Failures that are not provider errors come back as
    /// chat text.
    pub fn chat(&self, session: &mut Session, input: &str, focus: Option<NodeId>) -> Result<SystemResponse, EngineError> {
        if let Some(node) = focus {
            session.require_node(node)?;
        }
        let intent = oracle::classify(self.model.as_ref(), input, &session.history)?;
        self.run_intent(session, input, intent, focus)
    }

    fn run_intent(
        &self,
        session: &mut Session,
        input: &str,
        intent: Intent,
        focus: Option<NodeId>,
    ) -> Result<SystemResponse, EngineError> {
        let before = session.graph.clone();
        let mut applied = Vec::new();
        let mut sources = Vec::new();
        session.history.push(Role::User, input.trim());
        let chat = match intent.category {
            Category::Edit => {
                let request = match focus.and_then(|f| session.graph.node(f)) {
                    Some(node) => format!("{}\n(Focused node: {} {:?})", intent.content, node.id, node.title),
                    None => intent.content.clone(),
                };
                let manager = self.manager();
                let Session {
                    graph, history, op_log, ..
                } = session;
                match manager.handle_contribution(&request, graph, history, op_log) {
                    Ok(outcome) => {
                        applied = outcome.applied;
                        outcome.message
                    }
                    Err(MapError::PlanningFailure(reason)) => {
                        format!("I could not turn that into graph edits: {reason}")
                    }
                    Err(MapError::Provider { stage, source }) => return Err(EngineError::Provider { stage, source }),
                }
            }
            Category::Search | Category::Expansion => {
                let answered = match retriever::answer(
                    self.model.as_ref(),
                    &session.graph,
                    &session.store,
                    &session.tree,
                    &intent.content,
                    &self.config.retriever,
                ) {
                    Ok(a) => a,
                    Err(RetrieveError::Provider { stage, source }) => {
                        return Err(EngineError::Provider { stage, source })
                    }
                    Err(RetrieveError::EmptyTree) => {
                        let chat = "No documents have been uploaded yet, so there is nothing to search.".to_string();
                        session.history.push(Role::Assistant, chat.clone());
                        return Ok(SystemResponse {
                            chat,
                            intent: Some(intent),
                            applied,
                            sources,
                            delta: GraphDelta::between(&before, &session.graph),
                        });
                    }
                    Err(other) => return Err(EngineError::Invalid(other.to_string())),
                };
                if answered.insufficient {
                    REFUSAL.to_string()
                } else {
                    let covered = intent.category == Category::Search && answered.query.graph_answer.is_some();
                    if !covered {
                        let anchor = focus.or_else(|| {
                            (intent.category == Category::Expansion)
                                .then(|| crate::graph::find_anchor(&session.graph, &intent.content))
                                .and_then(|hits| hits.into_iter().find(|h| h.title_score > 0.0))
                                .map(|h| h.node)
                        });
                        let manager = self.manager();
                        let Session {
                            graph, history, op_log, ..
                        } = session;
                        applied = oracle::integrate_answer(
                            &manager,
                            graph,
                            history,
                            op_log,
                            &intent.content,
                            &answered.answer,
                            anchor,
                        )?;
                    }
                    let node_name = focus.and_then(|f| session.graph.node(f)).map(|n| n.title.clone());
                    sources = answered.sources.clone();
                    oracle::finalize(
                        self.model.as_ref(),
                        input.trim(),
                        &answered.query.refined,
                        &answered.answer,
                        &answered.sources,
                        node_name.as_deref(),
                    )
                }
            }
        };
        session.history.push(Role::Assistant, chat.clone());
        Ok(SystemResponse {
            chat,
            intent: Some(intent),
            applied,
            sources,
            delta: GraphDelta::between(&before, &session.graph),
        })
    }

    /// Runs a node toolbar action.
    pub fn node_action(&self, session: &mut Session, node: NodeId, action: NodeAction) -> Result<ActionResponse, EngineError> {
        session.require_node(node)?;
        let before = session.graph.clone();
        let mut chat = None;
        let mut suggestions = Vec::new();
        match action {
            NodeAction::Expand => {
                let title = session.graph.node(node).map(|n| n.title.clone()).unwrap_or_default();
                let intent = Intent {
                    category: Category::Expansion,
                    content: oracle::expansion_query(&title),
                };
                let input = format!("Tell me more about {title}");
                let response = self.run_intent(session, &input, intent, Some(node))?;
                chat = Some(response.chat);
            }
            NodeAction::Suggest => {
                suggestions = self.suggest(session, node)?;
            }
            NodeAction::Delete => {
                let op = GraphOp::DeleteNode {
                    node: node.to_string(),
                    policy: OrphanPolicy::Detach,
                };
                self.apply_direct(session, &op)?;
                session.suggestions.remove(&node);
            }
            NodeAction::Star => {
                let starred = session.graph.node(node).is_some_and(|n| n.starred);
                let op = GraphOp::UpdateNode {
                    node: node.to_string(),
                    patch: NodePatch {
                        starred: Some(!starred),
                        ..NodePatch::default()
                    },
                };
                self.apply_direct(session, &op)?;
            }
        }
        Ok(ActionResponse {
            action,
            chat,
            suggestions,
            delta: GraphDelta::between(&before, &session.graph),
        })
    }

    fn suggest(&self, session: &mut Session, node: NodeId) -> Result<Vec<Suggestion>, EngineError> {
        let title = session.graph.node(node).map(|n| n.title.clone()).unwrap_or_default();
        let context = if session.tree.is_empty() {
            "(no documents)".to_string()
        } else {
            let vector = self
                .model
                .embed(std::slice::from_ref(&title))
                .map_err(|source| EngineError::Provider {
                    stage: Stage::Embed,
                    source,
                })?
                .pop()
                .unwrap_or_default();
            let hits = session
                .tree
                .retrieve(&vector, Granularity::Collapsed, self.config.suggestion_context)?;
            hits.iter()
                .filter_map(|(id, _)| session.tree.node(*id).map(|n| n.text.trim().to_string()))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let existing = session.suggestions.get(&node).cloned().unwrap_or_default();
        let fresh = oracle::suggest(self.model.as_ref(), &session.graph, node, &existing, &context)?;
        session.suggestions.entry(node).or_default().extend(fresh.iter().cloned());
        Ok(fresh)
    }

    /// Adds a previously offered suggestion as a child of `node`.
    pub fn accept_suggestion(&self, session: &mut Session, node: NodeId, topic: &str) -> Result<GraphDelta, EngineError> {
        session.require_node(node)?;
        let suggestion = session
            .suggestions
            .get(&node)
            .and_then(|list| {
                list.iter()
                    .find(|s| crate::text::normalize_title(&s.topic) == crate::text::normalize_title(topic))
            })
            .cloned()
            .ok_or_else(|| EngineError::Invalid(format!("'{topic}' was not suggested for node {node}")))?;
        let before = session.graph.clone();
        let op = GraphOp::AddNode {
            title: suggestion.topic,
            detail: suggestion.description,
            parent: Some(node.to_string()),
            label: Some(suggestion.relationship),
        };
        op.apply(&mut session.graph, Origin::DocumentDerived)
            .map_err(|error| EngineError::InvalidOp { index: 0, error })?;
        session.op_log.push(OpLogEntry::Direct {
            op: op.to_string(),
            error: None,
        });
        Ok(GraphDelta::between(&before, &session.graph))
    }

    fn apply_direct(&self, session: &mut Session, op: &GraphOp) -> Result<AppliedOp, EngineError> {
        let result = op.apply(&mut session.graph, Origin::UserContributed);
        session.op_log.push(OpLogEntry::Direct {
            op: op.to_string(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result.map_err(|error| EngineError::InvalidOp { index: 0, error })
    }

    /// Applies client ops as one batch: all of them or none. `base_revision`
    /// must equal the current revision.
    pub fn apply_ops(
        &self,
        session: &mut Session,
        base_revision: u64,
        ops: &[GraphOp],
    ) -> Result<(Vec<AppliedOp>, GraphDelta), EngineError> {
        let actual = session.graph.revision();
        if base_revision != actual {
            return Err(EngineError::StaleRevision {
                expected: base_revision,
                actual,
            });
        }
        let mut graph = session.graph.clone();
        let mut applied = Vec::with_capacity(ops.len());
        for (index, op) in ops.iter().enumerate() {
            match op.apply(&mut graph, Origin::UserContributed) {
                Ok(a) => applied.push(a),
                Err(error) => {
                    session.op_log.push(OpLogEntry::Direct {
                        op: op.to_string(),
                        error: Some(error.to_string()),
                    });
                    return Err(EngineError::InvalidOp { index, error });
                }
            }
        }
        for op in ops {
            session.op_log.push(OpLogEntry::Direct {
                op: op.to_string(),
                error: None,
            });
        }
        let delta = GraphDelta::between(&session.graph, &graph);
        session.graph = graph;
        Ok((applied, delta))
    }

    /// Recomputes node positions.
    pub fn rearrange(&self, session: &mut Session, mode: LayoutMode) -> Result<GraphDelta, EngineError> {
        let before = session.graph.clone();
        let positions = layout(&session.graph, &self.config.layout, mode)?;
        if !positions.is_empty() {
            session.graph.set_positions(&positions)?;
        }
        Ok(GraphDelta::between(&before, &session.graph))
    }

    pub fn create_group(&self, session: &mut Session, members: &[NodeId]) -> Result<(GroupId, GraphDelta), EngineError> {
        let before = session.graph.clone();
        let group = session.graph.create_group(members)?;
        Ok((group, GraphDelta::between(&before, &session.graph)))
    }

    pub fn dissolve_group(&self, session: &mut Session, group: GroupId) -> Result<GraphDelta, EngineError> {
        let before = session.graph.clone();
        session.graph.dissolve_group(group)?;
        Ok(GraphDelta::between(&before, &session.graph))
    }

    pub fn remove_from_group(&self, session: &mut Session, group: GroupId, node: NodeId) -> Result<GraphDelta, EngineError> {
        let before = session.graph.clone();
        session.graph.remove_from_group(group, node)?;
        Ok(GraphDelta::between(&before, &session.graph))
    }
}

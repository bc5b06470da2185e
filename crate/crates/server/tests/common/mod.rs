#![allow(dead_code)]

use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cokg_core::graph::{GraphDelta, KnowledgeGraph};
use cokg_core::provider::{parse_transcript, ScriptedProvider};
use cokg_core::session::{Engine, EngineConfig};
use cokg_server::{router, AppState};

pub const CLIMATE: &str = include_str!("../../../../fixtures/climate.txt");
pub const SCENARIO_TRANSCRIPT: &str = include_str!("../../../../fixtures/scenario_transcript.txt");

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn scenario_model() -> ScriptedProvider {
    ScriptedProvider::from_transcript(parse_transcript(SCENARIO_TRANSCRIPT).unwrap()).with_extractive_summaries()
}

pub fn scenario_config() -> EngineConfig {
    let mut config = EngineConfig::default();
    config.chunk.target_words = 50;
    config
}

pub fn app_with(model: ScriptedProvider, data_dir: Option<PathBuf>) -> Client {
    let engine = Engine::new(std::sync::Arc::new(model), scenario_config());
    Client {
        app: router(AppState::new(engine, data_dir)),
    }
}

#[derive(Clone)]
pub struct Client {
    pub app: Router,
}

impl Client {
    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut builder = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                builder = builder.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let response = self.app.clone().oneshot(builder.body(body).unwrap()).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn ok(&self, method: Method, uri: &str, body: Option<Value>) -> Value {
        let (status, value) = self.call(method, uri, body).await;
        assert!(status.is_success(), "{uri}: {status} {value}");
        value
    }

    pub async fn session(&self) -> String {
        let v = self.ok(Method::POST, "/sessions", None).await;
        v["id"].as_str().unwrap().to_string()
    }

    pub async fn graph(&self, id: &str) -> KnowledgeGraph {
        let v = self.ok(Method::GET, &format!("/sessions/{id}/graph"), None).await;
        serde_json::from_value(v["graph"].clone()).unwrap()
    }

    pub async fn upload(&self, id: &str, text: &str) -> Value {
        self.ok(Method::POST, &format!("/sessions/{id}/documents"), Some(json!({ "text": text })))
            .await
    }

    pub async fn chat(&self, id: &str, input: &str, focus: Option<&str>) -> Value {
        let mut body = json!({ "input": input });
        if let Some(f) = focus {
            body["focus_node"] = json!(f);
        }
        self.ok(Method::POST, &format!("/sessions/{id}/chat"), Some(body)).await
    }

    pub async fn action(&self, id: &str, node: &str, action: &str) -> Value {
        self.ok(
            Method::POST,
            &format!("/sessions/{id}/nodes/{node}/actions"),
            Some(json!({ "action": action })),
        )
        .await
    }
}

pub fn delta_of(view: &Value) -> GraphDelta {
    serde_json::from_value(view["delta"].clone()).unwrap()
}

pub fn node_id(g: &KnowledgeGraph, title: &str) -> String {
    let ids = g.nodes_titled(title);
    assert_eq!(ids.len(), 1, "expected one node titled {title:?}");
    ids[0].to_string()
}

/// What each beat of the scripted mapping session produced.
pub struct ScenarioRun {
    pub session: String,
    pub overview: Value,
    pub suggestions: Value,
    pub accepted: Value,
    pub expansion: Value,
    pub focused: Value,
    pub contribution: Value,
    pub requery: Value,
    pub partial_requery: Value,
    pub graph: KnowledgeGraph,
}

/// Overview, suggestion, expansion, node-focused query, contribution, then
/// re-queries that must not duplicate existing nodes. Every step goes through
/// the HTTP router.
pub async fn run_scenario(client: &Client) -> ScenarioRun {
    let id = client.session().await;
    client.upload(&id, CLIMATE).await;

    let overview = client.chat(&id, "What are the main topics covered in the documents?", None).await;
    let g = client.graph(&id).await;

    let projections = node_id(&g, "Projections");
    let suggestions = client.action(&id, &projections, "suggest").await;
    let accepted = client
        .ok(
            Method::POST,
            &format!("/sessions/{id}/nodes/{projections}/suggestions/accept"),
            Some(json!({ "topic": "climate feedback mechanisms" })),
        )
        .await;

    let mitigation = node_id(&g, "Mitigation");
    let expansion = client.action(&id, &mitigation, "expand").await;

    let g = client.graph(&id).await;
    let sinks = node_id(&g, "Carbon Sinks");
    let focused = client.chat(&id, "How do forests absorb carbon?", Some(&sinks)).await;

    let contribution = client
        .chat(
            &id,
            "Add a concept called 'Financial Investment Relevance' linked from 'Greenhouse Gas Emissions' with the relation 'is important for'",
            None,
        )
        .await;

    let requery = client.chat(&id, "What are the main topics covered in the documents?", None).await;
    let partial_requery = client
        .chat(&id, "What human activities drive greenhouse gas emissions?", None)
        .await;

    let graph = client.graph(&id).await;
    ScenarioRun {
        session: id,
        overview,
        suggestions,
        accepted,
        expansion,
        focused,
        contribution,
        requery,
        partial_requery,
        graph,
    }
}

/// The graph the scenario should end with, built by direct graph calls in
/// the order the session makes its changes.
pub fn expected_scenario_graph() -> KnowledgeGraph {
    use cokg_core::graph::Origin::{DocumentDerived as Doc, UserContributed as User};
    let mut g = KnowledgeGraph::new();
    let cc = g
        .add_node("Climate Change", "Long-term shift in global temperatures and weather patterns.", Doc, None)
        .unwrap();
    let causes = g
        .add_node("Causes", "Human activity is the main driver of warming.", Doc, Some((cc, "is driven by")))
        .unwrap();
    let ghg = g
        .add_node(
            "Greenhouse Gas Emissions",
            "Carbon dioxide, methane and nitrous oxide that trap heat.",
            Doc,
            Some((causes, "includes")),
        )
        .unwrap();
    g.add_node("Effects", "Heatwaves, rising seas, droughts and floods.", Doc, Some((cc, "leads to")))
        .unwrap();
    let projections = g
        .add_node("Projections", "Estimated warming under different scenarios.", Doc, Some((cc, "is forecast by")))
        .unwrap();
    let mitigation = g
        .add_node("Mitigation", "Actions that limit warming.", Doc, Some((cc, "is limited by")))
        .unwrap();
    g.add_node(
        "climate feedback mechanisms",
        "Feedback loops such as thawing permafrost can amplify projected warming.",
        Doc,
        Some((projections, "is a component of")),
    )
    .unwrap();
    let sinks = g
        .add_node(
            "Carbon Sinks",
            "Natural stores that take up carbon dioxide from the air.",
            Doc,
            Some((mitigation, "includes")),
        )
        .unwrap();
    g.add_node("Renewable Energy", "Wind and solar power replacing coal plants.", Doc, Some((mitigation, "includes")))
        .unwrap();
    g.add_node("Forests", "Growing trees store carbon in wood, roots and soil.", Doc, Some((sinks, "such as")))
        .unwrap();
    let fir = g
        .add_node("Financial Investment Relevance", "Funding decides how quickly emissions fall.", User, None)
        .unwrap();
    g.add_edge(ghg, fir, "is important for").unwrap();
    g.add_node("Fossil Fuel Burning", "Coal, oil and gas release carbon dioxide.", Doc, Some((ghg, "comes from")))
        .unwrap();
    g.add_node("Deforestation", "Cutting trees removes a carbon store.", Doc, Some((ghg, "comes from")))
        .unwrap();
    g
}

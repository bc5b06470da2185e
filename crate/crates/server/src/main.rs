use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use cokg_core::graph::KnowledgeGraph;
use cokg_core::map_manager::MapManager;
use cokg_core::provider::{parse_transcript, HttpProvider, ScriptedProvider, SharedModel};
use cokg_core::replay::{parse_edit_corpus, parse_routing_corpus, replay_edits, replay_routing};
use cokg_core::session::Engine;
use cokg_server::config::ServiceConfig;
use cokg_server::{router, AppState};

#[derive(Parser)]
#[command(name = "cokg", version, about = "Knowledge-graph mapping service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Scripted,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Sessions are saved here after every change.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ProviderKind::Scripted)]
        provider: ProviderKind,
        /// Transcript for the scripted provider.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay a labeled corpus and print a metrics table.
    Replay {
        #[arg(value_enum)]
        kind: ReplayKind,
        #[arg(long)]
        corpus: PathBuf,
        /// Live mode (`--provider http`) reports accuracy against a real model.
        #[arg(long, value_enum, default_value_t = ProviderKind::Scripted)]
        provider: ProviderKind,
        /// Required for the scripted provider.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Starting graph for edit replays (serialized graph file).
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also print per-item outcomes as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReplayKind {
    Routing,
    Edits,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ServiceConfig> {
    match path {
        Some(p) => ServiceConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ServiceConfig::default()),
    }
}

fn scripted(transcript: Option<&Path>) -> anyhow::Result<ScriptedProvider> {
    let provider = match transcript {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScriptedProvider::from_transcript(parse_transcript(&text)?)
        }
        None => ScriptedProvider::new(),
    };
    Ok(provider.with_extractive_summaries())
}

async fn serve(
    addr: SocketAddr,
    data_dir: Option<PathBuf>,
    model: SharedModel,
    config: ServiceConfig,
) -> anyhow::Result<()> {
    if let Some(dir) = &data_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let state = AppState::new(Engine::new(model, config.engine), data_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve {
            port,
            host,
            data_dir,
            provider,
            transcript,
            config,
        } => {
            let config = load_config(config.as_deref())?;
            let model: SharedModel = match provider {
                ProviderKind::Scripted => Arc::new(scripted(transcript.as_deref())?),
                ProviderKind::Http => {
                    if transcript.is_some() {
                        bail!("--transcript only applies to the scripted provider");
                    }
                    Arc::new(HttpProvider::connect(config.http.clone())?)
                }
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host or port")?;
            tokio::runtime::Runtime::new()?.block_on(serve(addr, data_dir, model, config))
        }
        Command::Replay {
            kind,
            corpus,
            provider,
            transcript,
            graph,
            config,
            json,
        } => {
            let config = load_config(config.as_deref())?;
            let model: SharedModel = match (provider, transcript) {
                (ProviderKind::Scripted, Some(path)) => Arc::new(scripted(Some(&path))?),
                (ProviderKind::Scripted, None) => bail!("--transcript is required for the scripted provider"),
                (ProviderKind::Http, None) => Arc::new(HttpProvider::connect(config.http.clone())?),
                (ProviderKind::Http, Some(_)) => bail!("--transcript only applies to the scripted provider"),
            };
            let corpus_text =
                std::fs::read_to_string(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            match kind {
                ReplayKind::Routing => {
                    let cases = parse_routing_corpus(&corpus_text)?;
                    let report = replay_routing(model.as_ref(), &cases);
                    println!("{}", report.table());
                    if json {
                        println!("{}", serde_json::to_string_pretty(&report.outcomes)?);
                    }
                }
                ReplayKind::Edits => {
                    let cases = parse_edit_corpus(&corpus_text)?;
                    let mut start = match graph {
                        Some(path) => KnowledgeGraph::deserialize(&std::fs::read_to_string(&path)?)?,
                        None => KnowledgeGraph::new(),
                    };
                    let manager = MapManager::new(model.as_ref(), &config.engine.map_manager);
                    let report = replay_edits(&manager, &mut start, &cases);
                    println!("{}", report.table());
                    if json {
                        println!("{}", serde_json::to_string_pretty(&report.outcomes)?);
                    }
                }
            }
            Ok(())
        }
    }
}

//! Engine for co-constructing a knowledge graph from documents.

pub mod graph;
pub mod ids;
pub mod text;
pub mod prompts;
pub mod provider;
pub mod ingest;
pub mod raptor;
pub mod retriever;
pub mod history;
pub mod map_manager;
pub mod oracle;
pub mod session;
pub mod replay;

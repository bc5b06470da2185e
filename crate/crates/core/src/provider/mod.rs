//! Language-model backends.
//!
//! Everything that talks to a model goes through [`LanguageModel`]. Two
//! implementations ship: [`ScriptedProvider`], a transcript-backed stand-in
//! that makes the whole pipeline a pure function of its fixtures, and
//! [`HttpProvider`] for OpenAI-compatible endpoints. No other module performs
//! network I/O.

mod embedding;
mod http;
mod scripted;
mod transcript;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::prompts::PromptId;

pub use embedding::{hash_embedding, HASH_EMBEDDING_DIM, HASH_EMBEDDING_SEED};
pub use http::{HttpConfig, HttpProvider, ReqwestTransport, Transport, TransportError};
pub use scripted::{extractive_summary, CallRecord, ScriptedProvider};
pub use transcript::{parse_transcript, Transcript, TranscriptEntry, TranscriptError};

/// Which model tier serves a request: a strong model for planning and
/// routing, a cheaper one for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSlot {
    Planner,
    Utility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template: PromptId,
    /// The request's primary input (user text, node title, failing op...);
    /// transcripts match on it.
    pub subject: String,
    pub prompt: String,
    pub slot: ModelSlot,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(template: PromptId, subject: impl Into<String>, prompt: String) -> Self {
        Self {
            template,
            subject: subject.into(),
            prompt,
            slot: ModelSlot::Utility,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn planner(mut self) -> Self {
        self.slot = ModelSlot::Planner;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("no transcript entry for prompt '{template}' with subject '{subject}'")]
    NoTranscriptMatch { template: PromptId, subject: String },
    #[error("{count} transcript entries match prompt '{template}' with subject '{subject}'")]
    AmbiguousTranscriptMatch {
        template: PromptId,
        subject: String,
        count: usize,
    },
    #[error("provider request failed: {0}")]
    Request(String),
    #[error("provider returned an unusable response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Pipeline stage a provider call belongs to; reported with provider
/// failures so callers can tell which step broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Classify,
    Rewrite,
    Embed,
    Grade,
    Synthesize,
    Summarize,
    Integrate,
    Suggest,
    Finalize,
    Plan,
    SelfCorrect,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Classify => "classify",
            Stage::Rewrite => "rewrite",
            Stage::Embed => "embed",
            Stage::Grade => "grade",
            Stage::Synthesize => "synthesize",
            Stage::Summarize => "summarize",
            Stage::Integrate => "integrate",
            Stage::Suggest => "suggest",
            Stage::Finalize => "finalize",
            Stage::Plan => "plan",
            Stage::SelfCorrect => "self_correct",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;

    /// One vector per input text, all of length [`LanguageModel::dimension`].
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;

    fn dimension(&self) -> usize;
}

pub type SharedModel = Arc<dyn LanguageModel>;

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        (**self).embed(texts)
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        dot += f64::from(*x) * f64::from(*y);
        na += f64::from(*x) * f64::from(*x);
        nb += f64::from(*y) * f64::from(*y);
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32
}

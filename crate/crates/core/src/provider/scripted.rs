use std::collections::VecDeque;
use std::sync::{Mutex, MutexGuard};

use super::embedding::{hash_embedding, HASH_EMBEDDING_DIM, HASH_EMBEDDING_SEED};
use super::transcript::{Transcript, TranscriptEntry};
use super::{CompletionRequest, LanguageModel, ProviderError};
use unicode_segmentation::UnicodeSegmentation;

use crate::prompts::PromptId;
use crate::text::truncate_words;

type Responder = Box<dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync>;

/// One completion call as seen by the scripted provider.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub template: PromptId,
    pub subject: String,
    pub response: Result<String, ProviderError>,
}

struct EntryState {
    entry: TranscriptEntry,
    served: usize,
}

#[derive(Default)]
struct State {
    entries: Vec<EntryState>,
    calls: Vec<CallRecord>,
    injected_failures: VecDeque<ProviderError>,
}

/// Deterministic provider driven by transcript entries.
///
/// A request is answered by the transcript entry whose prompt id equals the
/// request's and whose key is a substring of the request subject. When
/// several entries match, the one with the longest key wins; a tie between
/// equally long keys is an error. Requests no entry matches fall through to
/// responder closures registered for the prompt id, and fail with
/// [`ProviderError::NoTranscriptMatch`] after that. Embeddings use
/// [`hash_embedding`].
pub struct ScriptedProvider {
    state: Mutex<State>,
    responders: Vec<(PromptId, Responder)>,
    dimension: usize,
    seed: u64,
}

impl Default for ScriptedProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self {
            state: Mutex::new(State::default()),
            responders: Vec::new(),
            dimension: HASH_EMBEDDING_DIM,
            seed: HASH_EMBEDDING_SEED,
        }
    }

    pub fn from_transcript(transcript: Transcript) -> Self {
        let provider = Self::new();
        for entry in transcript.entries {
            provider.add(entry);
        }
        provider
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn add(&self, entry: TranscriptEntry) {
        self.state().entries.push(EntryState { entry, served: 0 });
    }

    /// Shorthand for a single-response entry.
    pub fn script(&self, template: PromptId, key: &str, response: &str) {
        self.add(TranscriptEntry::new(template, key, response));
    }

    /// Registers a fallback that computes a response from the request.
    pub fn with_responder<F>(mut self, template: PromptId, responder: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static,
    {
        self.responders.push((template, Box::new(responder)));
        self
    }

    /// Answers summarize requests nobody scripted with the first sentence of
    /// each passage, capped at 120 words.
    pub fn with_extractive_summaries(self) -> Self {
        self.with_responder(PromptId::Summarize, |r| Some(extractive_summary(&r.subject, 120)))
    }

    pub fn with_embedding(mut self, dimension: usize, seed: u64) -> Self {
        self.dimension = dimension;
        self.seed = seed;
        self
    }

    /// The next `complete` calls fail with these errors, in order, before
    /// any transcript lookup happens.
    pub fn inject_failures(&self, failures: impl IntoIterator<Item = ProviderError>) {
        self.state().injected_failures.extend(failures);
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.state().calls.clone()
    }

    pub fn calls_for(&self, template: PromptId) -> usize {
        self.state().calls.iter().filter(|c| c.template == template).count()
    }

    pub fn clear_calls(&self) {
        self.state().calls.clear();
    }

    fn lookup(&self, state: &mut State, request: &CompletionRequest) -> Result<String, ProviderError> {
        if let Some(err) = state.injected_failures.pop_front() {
            return Err(err);
        }
        let matching: Vec<usize> = state
            .entries
            .iter()
            .enumerate()
            .filter(|(_, s)| s.entry.template == request.template && request.subject.contains(&s.entry.key))
            .map(|(i, _)| i)
            .collect();
        if let Some(longest) = matching.iter().map(|i| state.entries[*i].entry.key.len()).max() {
            let best: Vec<usize> = matching
                .into_iter()
                .filter(|i| state.entries[*i].entry.key.len() == longest)
                .collect();
            if best.len() > 1 {
                return Err(ProviderError::AmbiguousTranscriptMatch {
                    template: request.template,
                    subject: request.subject.clone(),
                    count: best.len(),
                });
            }
            let slot = &mut state.entries[best[0]];
            let responses = &slot.entry.responses;
            let response = responses
                .get(slot.served)
                .or(responses.last())
                .cloned()
                .unwrap_or_default();
            slot.served += 1;
            return Ok(response);
        }
        self.responders
            .iter()
            .filter(|(t, _)| *t == request.template)
            .find_map(|(_, f)| f(request))
            .ok_or_else(|| ProviderError::NoTranscriptMatch {
                template: request.template,
                subject: request.subject.clone(),
            })
    }
}

/// First sentence of every blank-line separated passage, joined and cut to
/// `max_words` words.
pub fn extractive_summary(passages: &str, max_words: usize) -> String {
    let joined: Vec<&str> = passages
        .split("\n\n")
        .filter_map(|p| p.unicode_sentences().next())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    truncate_words(&joined.join(" "), max_words).to_string()
}

impl LanguageModel for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut state = self.state();
        let response = self.lookup(&mut state, request);
        state.calls.push(CallRecord {
            template: request.template,
            subject: request.subject.clone(),
            response: response.clone(),
        });
        response
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("nothing to embed".into()));
        }
        Ok(texts
            .iter()
            .map(|t| hash_embedding(t, self.dimension, self.seed))
            .collect())
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

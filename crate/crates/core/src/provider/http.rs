use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionRequest, LanguageModel, ModelSlot, ProviderError};

/// Connection settings for an OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub planner_model: String,
    pub utility_model: String,
    pub embedding_model: String,
    pub dimension: usize,
    pub timeout_secs: u64,
    /// Extra attempts after a transient failure.
    pub max_retries: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            planner_model: "gpt-4o".into(),
            utility_model: "gpt-4o-mini".into(),
            embedding_model: "text-embedding-3-small".into(),
            dimension: 1536,
            timeout_secs: 60,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    /// Timeouts, connection resets, 429 and 5xx: worth retrying.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

/// JSON-over-HTTP POST. Split out so retries can be exercised without a
/// network.
pub trait Transport: Send + Sync {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
    base: String,
    api_key: Option<String>,
}

impl ReqwestTransport {
    pub fn new(config: &HttpConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Request(e.to_string()))?;
        Ok(Self {
            client,
            base: config.endpoint.trim_end_matches('/').to_string(),
            api_key: std::env::var(&config.api_key_env).ok(),
        })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let mut request = self.client.post(format!("{}{}", self.base, path)).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                TransportError::Transient(e.to_string())
            } else {
                TransportError::Fatal(e.to_string())
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(TransportError::Fatal(format!("HTTP {status}: {text}")));
        }
        response.json::<Value>().map_err(|e| TransportError::Fatal(e.to_string()))
    }
}

pub struct HttpProvider<T: Transport = ReqwestTransport> {
    transport: T,
    config: HttpConfig,
}

impl HttpProvider<ReqwestTransport> {
    pub fn connect(config: HttpConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: ReqwestTransport::new(&config)?,
            config,
        })
    }
}

impl<T: Transport> HttpProvider<T> {
    pub fn with_transport(transport: T, config: HttpConfig) -> Self {
        Self { transport, config }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.transport.post_json(path, body) {
                Ok(value) => return Ok(value),
                Err(TransportError::Transient(msg)) if attempt < self.config.max_retries => {
                    attempt += 1;
                    tracing::warn!(attempt, %msg, "retrying provider request");
                }
                Err(e) => return Err(ProviderError::Request(e.to_string())),
            }
        }
    }
}

impl<T: Transport> LanguageModel for HttpProvider<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let model = match request.slot {
            ModelSlot::Planner => &self.config.planner_model,
            ModelSlot::Utility => &self.config.utility_model,
        };
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = self.post("/chat/completions", &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse("missing choices[0].message.content".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("nothing to embed".into()));
        }
        let body = json!({"model": self.config.embedding_model, "input": texts});
        let value = self.post("/embeddings", &body)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| ProviderError::BadResponse("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let vector: Vec<f32> = item["embedding"]
                    .as_array()
                    .ok_or_else(|| ProviderError::BadResponse("missing embedding".into()))?
                    .iter()
                    .map(|v| v.as_f64().map(|f| f as f32))
                    .collect::<Option<_>>()
                    .ok_or_else(|| ProviderError::BadResponse("non-numeric embedding".into()))?;
                if vector.len() != self.config.dimension {
                    return Err(ProviderError::BadResponse(format!(
                        "embedding has {} dimensions, expected {}",
                        vector.len(),
                        self.config.dimension
                    )));
                }
                Ok(vector)
            })
            .collect()
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::prompts::PromptId;

    /// Fails the first `failures` calls transiently, then answers.
    struct Flaky {
        failures: Mutex<u32>,
        calls: Mutex<Vec<(String, Value)>>,
        reply: Value,
    }

    impl Transport for Flaky {
        fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
            self.calls.lock().unwrap().push((path.to_string(), body.clone()));
            let mut left = self.failures.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(TransportError::Transient("timed out".into()));
            }
            Ok(self.reply.clone())
        }
    }

    fn flaky(failures: u32, reply: Value) -> Flaky {
        Flaky {
            failures: Mutex::new(failures),
            calls: Mutex::new(Vec::new()),
            reply,
        }
    }

    fn chat_reply(text: &str) -> Value {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
    }

    #[test]
    fn one_timeout_then_success_is_a_success() {
        let provider = HttpProvider::with_transport(flaky(1, chat_reply("ok")), HttpConfig::default());
        let request = CompletionRequest::new(PromptId::Summarize, "s", "prompt".into()).planner();
        assert_eq!(provider.complete(&request).unwrap(), "ok");
        let calls = provider.transport.calls.lock().unwrap();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].0, "/chat/completions");
        assert_eq!(calls[0].1["model"], "gpt-4o");
    }

    #[test]
    fn retries_are_bounded() {
        let provider = HttpProvider::with_transport(flaky(3, chat_reply("late")), HttpConfig::default());
        let request = CompletionRequest::new(PromptId::Summarize, "s", "prompt".into());
        assert!(matches!(provider.complete(&request), Err(ProviderError::Request(_))));
        assert_eq!(provider.transport.calls.lock().unwrap().len(), 3);
    }

    #[test]
    fn embeddings_checked_for_dimension() {
        let config = HttpConfig {
            dimension: 2,
            ..HttpConfig::default()
        };
        let reply = json!({"data": [{"embedding": [0.1, 0.2]}]});
        let provider = HttpProvider::with_transport(flaky(0, reply), config.clone());
        assert_eq!(provider.embed(&["a".into()]).unwrap(), vec![vec![0.1f32, 0.2]]);

        let wrong = json!({"data": [{"embedding": [0.1]}]});
        let provider = HttpProvider::with_transport(flaky(0, wrong), config);
        assert!(matches!(provider.embed(&["a".into()]), Err(ProviderError::BadResponse(_))));
    }
}

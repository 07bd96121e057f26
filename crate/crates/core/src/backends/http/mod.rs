//! OpenAI-compatible HTTP backends.
//!
//! [`HttpGenerator`] samples reasoning steps from `POST {base_url}/v1/chat/completions`.
//! [`HttpEmbedder`] uses `POST {base_url}/v1/embeddings`. [`HttpReward`] posts
//! `{"path": [...]}` to a reward server and expects `{"score": <0..1>}` back.
//! All three share [`JsonClient`], which caps in-flight requests and retries
//! network failures, HTTP 429 and 5xx with exponential backoff.

pub mod transport;

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use self::transport::{FixtureTransport, HttpRequest, Transport, TransportError, UreqTransport};
use super::{
    BackendResult, Candidate, EmbeddingBackend, GeneratorBackend, RawEmbedding, RewardBackend,
    Scored,
};
use crate::error::{BackendError, Result};

pub const CHAT_PATH: &str = "/v1/chat/completions";
pub const EMBEDDINGS_PATH: &str = "/v1/embeddings";

const DEFAULT_SYSTEM_PROMPT: &str = "Solve the problem step by step. Reply with exactly one \
reasoning step. When you reach the final answer, write it as \"The answer is <answer>\".";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    /// Step delimiter passed as the `stop` sequence.
    pub stop: String,
    /// A completion containing this text is a terminal step.
    pub answer_pattern: String,
    pub system_prompt: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub timeout_s: u64,
    pub embedding_model: String,
    /// Full URL of the reward server.
    pub reward_url: Option<String>,
    /// Replay recorded exchanges from this JSONL file instead of the network.
    pub fixtures: Option<PathBuf>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".into(),
            model: "default".into(),
            temperature: 0.7,
            stop: "\n".into(),
            answer_pattern: super::ANSWER_MARKER.into(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_attempts: 3,
            backoff_ms: 500,
            max_in_flight: 8,
            timeout_s: 120,
            embedding_model: "all-MiniLM-L6-v2".into(),
            reward_url: None,
            fixtures: None,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap_or_else(|e| e.into_inner());
        }
        *slots -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

/// JSON-over-HTTP client with retries and an in-flight cap.
pub struct JsonClient {
    transport: Arc<dyn Transport>,
    base_url: String,
    api_key: Option<String>,
    max_attempts: u32,
    backoff: Duration,
    in_flight: InFlight,
}

impl JsonClient {
    pub fn new(config: &HttpConfig, transport: Arc<dyn Transport>) -> Self {
        let api_key = (!config.api_key_env.is_empty())
            .then(|| std::env::var(&config.api_key_env).ok())
            .flatten()
            .filter(|k| !k.is_empty());
        Self {
            transport,
            base_url: config.base_url.trim_end_matches('/').to_owned(),
            api_key,
            max_attempts: config.max_attempts.max(1),
            backoff: Duration::from_millis(config.backoff_ms),
            in_flight: InFlight::new(config.max_in_flight),
        }
    }

    /// Live client, or fixture replay when `config.fixtures` is set.
    pub fn from_config(config: &HttpConfig) -> Result<Self> {
        let transport: Arc<dyn Transport> = match &config.fixtures {
            Some(path) => Arc::new(FixtureTransport::load(path)?),
            None => Arc::new(UreqTransport::new(Duration::from_secs(config.timeout_s))),
        };
        Ok(Self::new(config, transport))
    }

    /// POST `body` to `path` under the base URL.
    pub fn post_json(&self, path: &str, body: Value) -> BackendResult<Value> {
        self.post_url(format!("{}{}", self.base_url, path), path, body)
    }

    /// POST `body` to an absolute URL; `path` keys the fixture hash.
    pub fn post_url(&self, url: String, path: &str, body: Value) -> BackendResult<Value> {
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_owned(), format!("Bearer {key}")));
        }
        let request = HttpRequest {
            url,
            path: path.to_owned(),
            headers,
            body,
        };
        let mut last = None;
        for attempt in 1..=self.max_attempts {
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.transport.post(&request)
            };
            match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return serde_json::from_str(&reply.body)
                        .map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")));
                }
                Ok(reply) => {
                    let err = BackendError::Status {
                        status: reply.status,
                        attempts: attempt,
                        body: reply.body,
                    };
                    if !retryable(reply.status) {
                        return Err(err);
                    }
                    last = Some(err);
                }
                Err(TransportError::MissingFixture(hash)) => {
                    return Err(BackendError::MissingFixture(hash));
                }
                Err(TransportError::Network(message)) => {
                    last = Some(BackendError::Network {
                        attempts: attempt,
                        message,
                    });
                }
            }
            if attempt < self.max_attempts && !self.backoff.is_zero() {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
        }
        Err(last.unwrap_or_else(|| BackendError::Protocol("no attempt was made".into())))
    }
}

/// Chat-completions step generator.
pub struct HttpGenerator {
    client: Arc<JsonClient>,
    model: String,
    temperature: f64,
    stop: String,
    answer_pattern: String,
    system_prompt: String,
}

impl HttpGenerator {
    pub fn new(config: &HttpConfig, client: Arc<JsonClient>) -> Self {
        Self {
            client,
            model: config.model.clone(),
            temperature: config.temperature,
            stop: config.stop.clone(),
            answer_pattern: config.answer_pattern.clone(),
            system_prompt: config.system_prompt.clone(),
        }
    }

    fn user_message(path: &[&str]) -> String {
        let problem = path.first().copied().unwrap_or_default();
        let steps = if path.len() > 1 {
            path[1..].join("\n")
        } else {
            "(none yet)".to_owned()
        };
        format!("Problem: {problem}\n\nSteps so far:\n{steps}\n\nWrite the next step.")
    }

    pub fn request_body(&self, path: &[&str], n: usize) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": Self::user_message(path)},
            ],
            "temperature": self.temperature,
            "n": n,
            "stop": [self.stop],
        })
    }

    fn parse_choices(&self, response: &Value) -> BackendResult<Vec<String>> {
        let choices = response
            .get("choices")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol("response has no `choices` array".into()))?;
        choices
            .iter()
            .map(|choice| {
                let content = choice
                    .pointer("/message/content")
                    .and_then(Value::as_str)
                    .ok_or_else(|| BackendError::Protocol("choice has no message content".into()))?;
                let content = content.trim_start();
                let step = match (self.stop.is_empty(), content.find(self.stop.as_str())) {
                    (false, Some(i)) => &content[..i],
                    _ => content,
                };
                Ok(step.trim().to_owned())
            })
            .collect()
    }

    /// Sample `b` steps; servers that return fewer choices than `n` are asked again.
    pub fn http_expand(&self, path: &[&str], b: usize) -> BackendResult<Vec<Candidate>> {
        let started = Instant::now();
        let mut steps = Vec::with_capacity(b);
        while steps.len() < b {
            let response = self
                .client
                .post_json(CHAT_PATH, self.request_body(path, b - steps.len()))?;
            let batch = self.parse_choices(&response)?;
            if batch.is_empty() {
                return Err(BackendError::Protocol("response contained no choices".into()));
            }
            steps.extend(batch);
        }
        steps.truncate(b);
        let cost = started.elapsed().as_secs_f64() / b.max(1) as f64;
        Ok(steps
            .into_iter()
            .map(|text| Candidate {
                terminal: text.contains(self.answer_pattern.as_str()),
                text,
                cost,
                group: None,
            })
            .collect())
    }
}

impl GeneratorBackend for HttpGenerator {
    fn expand(&self, path: &[&str], b: usize, _seed: u64) -> BackendResult<Vec<Candidate>> {
        self.http_expand(path, b)
    }
}

/// `/v1/embeddings` client.
pub struct HttpEmbedder {
    client: Arc<JsonClient>,
    model: String,
}

impl HttpEmbedder {
    pub fn new(config: &HttpConfig, client: Arc<JsonClient>) -> Self {
        Self {
            client,
            model: config.embedding_model.clone(),
        }
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed(&self, text: &str) -> BackendResult<RawEmbedding> {
        let started = Instant::now();
        let response = self
            .client
            .post_json(EMBEDDINGS_PATH, json!({"model": self.model, "input": text}))?;
        let values = response
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| BackendError::Protocol("embedding entry is not a number".into()))
            })
            .collect::<BackendResult<Vec<f64>>>()?;
        Ok(RawEmbedding {
            values,
            cost: started.elapsed().as_secs_f64(),
        })
    }
}

/// Process-reward client for a server answering `{"score": f}`.
pub struct HttpReward {
    client: Arc<JsonClient>,
    url: String,
}

impl HttpReward {
    pub fn new(url: impl Into<String>, client: Arc<JsonClient>) -> Self {
        Self {
            client,
            url: url.into(),
        }
    }
}

impl RewardBackend for HttpReward {
    fn score(&self, path: &[&str]) -> BackendResult<Scored> {
        let started = Instant::now();
        let route = self
            .url
            .split_once("://")
            .and_then(|(_, rest)| rest.find('/').map(|i| rest[i..].to_owned()))
            .unwrap_or_else(|| "/".to_owned());
        let response = self
            .client
            .post_url(self.url.clone(), &route, json!({ "path": path }))?;
        let phi = response
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| BackendError::Protocol("reward response has no numeric `score`".into()))?;
        if !(0.0..=1.0).contains(&phi) {
            return Err(BackendError::Protocol(format!("reward {phi} outside [0, 1]")));
        }
        Ok(Scored {
            phi,
            cost: started.elapsed().as_secs_f64(),
        })
    }
}

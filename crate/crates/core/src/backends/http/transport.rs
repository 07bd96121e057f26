//! Wire transports for the HTTP backends: a live client and a recorded-fixture
//! replayer.
//!
//! Fixture files are JSONL, one exchange per line:
//!
//! ```text
//! {"hash":"<sha256 hex>","path":"/v1/chat/completions","request":{...},"response":{"status":200,"body":{...}}}
//! ```
//!
//! `hash` covers the endpoint path and the canonical (key-sorted) request
//! body, so fixtures ignore the host and any credentials. A `body` given as
//! a JSON string is replayed verbatim; any other JSON value is re-serialized.
//! Several lines may share a hash: they are served in file order and the
//! last one keeps being served once the earlier ones are used up, which is
//! how retry sequences such as `500, 500, 200` are recorded.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    /// Full URL the live transport posts to.
    pub url: String,
    /// Endpoint path, e.g. `/v1/chat/completions`; part of the fixture hash.
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Connection-level failure; retried.
    Network(String),
    /// Fixture replay has no entry for this request; not retried.
    MissingFixture(String),
}

pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest) -> std::result::Result<HttpReply, TransportError>;
}

/// Recursively sort object keys so equal requests serialize identically.
pub fn canonical_json(value: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let ordered: BTreeMap<&String, Value> =
                    map.iter().map(|(k, v)| (k, sorted(v))).collect();
                Value::Object(
                    ordered
                        .into_iter()
                        .map(|(k, v)| (k.clone(), v))
                        .collect(),
                )
            }
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    sorted(value).to_string()
}

pub fn request_hash(path: &str, body: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(path.as_bytes());
    hasher.update(b"\n");
    hasher.update(canonical_json(body).as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Blocking HTTP transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: config.into(),
        }
    }
}

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest) -> std::result::Result<HttpReply, TransportError> {
        let mut builder = self
            .agent
            .post(&request.url)
            .header("Content-Type", "application/json");
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        let mut response = builder
            .send(request.body.to_string())
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureResponse {
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub hash: String,
    pub path: String,
    pub request: Value,
    pub response: FixtureResponse,
}

impl FixtureEntry {
    fn reply(&self) -> HttpReply {
        let body = match &self.response.body {
            Value::String(raw) => raw.clone(),
            other => other.to_string(),
        };
        HttpReply {
            status: self.response.status,
            body,
        }
    }
}

/// Serves recorded exchanges keyed by request hash; never touches the network.
pub struct FixtureTransport {
    queues: Mutex<HashMap<String, VecDeque<HttpReply>>>,
}

impl FixtureTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let mut queues: HashMap<String, VecDeque<HttpReply>> = HashMap::new();
        for e in entries {
            queues.entry(e.hash.clone()).or_default().push_back(e.reply());
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }
}

impl Transport for FixtureTransport {
    fn post(&self, request: &HttpRequest) -> std::result::Result<HttpReply, TransportError> {
        let hash = request_hash(&request.path, &request.body);
        let mut queues = self.queues.lock().unwrap_or_else(|e| e.into_inner());
        let queue = queues
            .get_mut(&hash)
            .ok_or_else(|| TransportError::MissingFixture(hash.clone()))?;
        let reply = if queue.len() > 1 {
            queue.pop_front()
        } else {
            queue.front().cloned()
        };
        reply.ok_or(TransportError::MissingFixture(hash))
    }
}

/// Forwards to another transport and appends every exchange to a fixture file.
pub struct RecordingTransport<T> {
    inner: T,
    out: Mutex<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, fixture_path: &Path) -> Result<Self> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(fixture_path)
            .map_err(|e| Error::io(fixture_path, e))?;
        Ok(Self {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(&self, request: &HttpRequest) -> std::result::Result<HttpReply, TransportError> {
        let reply = self.inner.post(request)?;
        let body = serde_json::from_str::<Value>(&reply.body)
            .ok()
            .filter(|v| !v.is_string())
            .unwrap_or_else(|| Value::String(reply.body.clone()));
        let entry = FixtureEntry {
            hash: request_hash(&request.path, &request.body),
            path: request.path.clone(),
            request: request.body.clone(),
            response: FixtureResponse {
                status: reply.status,
                body,
            },
        };
        if let Ok(line) = serde_json::to_string(&entry) {
            let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
            // recording is best effort; the live reply is still returned
            let _ = writeln!(out, "{line}");
        }
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a = json!({"model": "m", "n": 2, "messages": [{"role": "user", "content": "x"}]});
        let b = json!({"n": 2, "messages": [{"content": "x", "role": "user"}], "model": "m"});
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(request_hash("/p", &a), request_hash("/p", &b));
        assert_ne!(request_hash("/p", &a), request_hash("/q", &a));
        assert_eq!(request_hash("/p", &a).len(), 64);
    }

    #[test]
    fn fixture_queue_is_sticky_on_last_entry() {
        let body = json!({"x": 1});
        let entry = |status, text: &str| FixtureEntry {
            hash: request_hash("/p", &body),
            path: "/p".into(),
            request: body.clone(),
            response: FixtureResponse {
                status,
                body: Value::String(text.into()),
            },
        };
        let t = FixtureTransport::from_entries([entry(500, "a"), entry(200, "b")]);
        let req = HttpRequest {
            url: "http://unused/p".into(),
            path: "/p".into(),
            headers: vec![],
            body: body.clone(),
        };
        assert_eq!(t.post(&req).unwrap().status, 500);
        assert_eq!(t.post(&req).unwrap().body, "b");
        assert_eq!(t.post(&req).unwrap().body, "b");
        let other = HttpRequest {
            body: json!({"x": 2}),
            ..req
        };
        assert!(matches!(t.post(&other), Err(TransportError::MissingFixture(_))));
    }
}

//! Blocking HTTP clients for chat-completions and embeddings endpoints.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{BackendError, Embedder, GenerationRequest, Generator};
use crate::index::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` or `/embeddings` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: usize,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub batch_size: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: String::new(),
            api_key: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_base_ms: 500,
            max_in_flight: 8,
            batch_size: 128,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    limit: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().expect("in-flight lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.current.lock().expect("in-flight lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared transport: agent, retry loop, in-flight limit, counters.
struct Client {
    config: HttpConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
    retries: AtomicUsize,
    requests: AtomicUsize,
}

impl Client {
    fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight::new(config.max_in_flight);
        Self {
            config,
            agent,
            in_flight,
            retries: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying non-2xx and transport failures with exponential
    /// backoff, and returns the parsed JSON response.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.url(path);
        let _permit = self.in_flight.acquire();
        let mut attempt = 0usize;
        loop {
            attempt += 1;
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let failure = match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport {
                        url: url.clone(),
                        attempts: attempt,
                        message: e.to_string(),
                    });
                    if (200..300).contains(&status) {
                        let text = text?;
                        return serde_json::from_str(&text).map_err(|e| BackendError::Malformed {
                            url: url.clone(),
                            message: e.to_string(),
                        });
                    }
                    BackendError::Status {
                        url: url.clone(),
                        status,
                        attempts: attempt,
                        body: text.unwrap_or_default(),
                    }
                }
                Err(e) => BackendError::Transport {
                    url: url.clone(),
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.config.max_retries {
                return Err(failure);
            }
            warn!(%url, attempt, error = %failure, "request failed, retrying");
            self.retries.fetch_add(1, Ordering::Relaxed);
            let backoff = self.config.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }
}

pub struct HttpGenerator {
    client: Client,
}

impl HttpGenerator {
    pub fn new(config: HttpConfig) -> Self {
        Self {
            client: Client::new(config),
        }
    }

    /// Total retries performed so far.
    pub fn retry_count(&self) -> usize {
        self.client.retries.load(Ordering::Relaxed)
    }

    pub fn request_count(&self) -> usize {
        self.client.requests.load(Ordering::Relaxed)
    }
}

pub fn chat_payload(model: &str, request: &GenerationRequest) -> Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": request.user},
        ],
        "max_tokens": request.max_new_tokens,
        "temperature": request.temperature,
    })
}

/// Reads `choices[0].message.content`.
pub fn parse_chat_response(url: &str, body: &Value) -> Result<String, BackendError> {
    let missing = |field: &str| BackendError::MissingField {
        url: url.to_string(),
        field: field.to_string(),
    };
    let choices = body.get("choices").ok_or_else(|| missing("choices"))?;
    let first = choices.get(0).ok_or_else(|| missing("choices[0]"))?;
    first
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| missing("choices[0].message.content"))
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let body = chat_payload(&self.client.config.model, request);
        let resp = self.client.post_json("chat/completions", &body)?;
        parse_chat_response(&self.client.url("chat/completions"), &resp)
    }
}

pub struct HttpEmbedder {
    client: Client,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig, dim: usize) -> Self {
        Self {
            client: Client::new(config),
            dim,
        }
    }

    /// Asks the server for one embedding to learn its dimension.
    pub fn probe(config: HttpConfig) -> Result<Self, BackendError> {
        let mut embedder = Self::new(config, 0);
        let raw = embedder.request_batch(&["dimension probe".to_string()])?;
        embedder.dim = raw.first().map(Vec::len).unwrap_or(0);
        Ok(embedder)
    }

    pub fn retry_count(&self) -> usize {
        self.client.retries.load(Ordering::Relaxed)
    }

    pub fn request_count(&self) -> usize {
        self.client.requests.load(Ordering::Relaxed)
    }

    fn request_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({"model": self.client.config.model, "input": texts});
        let resp = self.client.post_json("embeddings", &body)?;
        let url = self.client.url("embeddings");
        parse_embedding_response(&url, &resp, texts.len())
    }
}

/// Reads `data[i].embedding`, ordered by `data[i].index` when present.
pub fn parse_embedding_response(url: &str, body: &Value, expected: usize) -> Result<Vec<Vec<f64>>, BackendError> {
    let missing = |field: String| BackendError::MissingField {
        url: url.to_string(),
        field,
    };
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| missing("data".into()))?;
    if data.len() != expected {
        return Err(BackendError::CountMismatch {
            expected,
            actual: data.len(),
        });
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (i, item) in data.iter().enumerate() {
        let pos = item.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| missing(format!("data[{i}].embedding")))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| missing(format!("data[{i}].embedding numeric values"))))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((pos, values));
    }
    rows.sort_by_key(|(pos, _)| *pos);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.client.config.batch_size.max(1)) {
            for raw in self.request_batch(chunk)? {
                if raw.len() != self.dim {
                    return Err(BackendError::DimMismatch {
                        expected: self.dim,
                        actual: raw.len(),
                    });
                }
                out.push(EmbeddingVector::normalized(raw).map_err(|e| BackendError::InvalidVector(e.to_string()))?);
            }
        }
        Ok(out)
    }
}

//! Blocking client for chat-completions compatible endpoints.
//!
//! Requests go to `{base_url}/v1/chat/completions` with the de-facto JSON
//! schema (`model`, `messages`, `temperature`, `max_tokens`, optional `stop`);
//! the answer is the first choice's message content. Every response is stored
//! in a [`ResponseCache`] keyed by the request fingerprint, so a rerun with a
//! warm cache makes no network calls.

mod cache;

pub use cache::{CacheRecord, ResponseCache};

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::prompts::RenderedPrompt;

pub const CHAT_COMPLETIONS_PATH: &str = "/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "FINFUSE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint unreachable after {attempts} attempt(s): {last_error}")]
    EndpointUnreachable { attempts: u32, last_error: String },
    #[error("endpoint returned non-retryable status {0}")]
    NonRetryableStatus(u16),
    #[error("unexpected response schema: {0}")]
    ResponseSchemaError(String),
    #[error("cache write failed: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    /// System message first (when the prompt has one), then the user turn.
    pub fn from_prompt(model_name: &str, prompt: &RenderedPrompt, max_tokens: u32) -> Self {
        let mut messages = Vec::with_capacity(2);
        if !prompt.system_text.is_empty() {
            messages.push(ChatMessage {
                role: Role::System,
                content: prompt.system_text.clone(),
            });
        }
        messages.push(ChatMessage {
            role: Role::User,
            content: prompt.user_text.clone(),
        });
        Self {
            model_name: model_name.to_string(),
            messages,
            temperature: 0.0,
            max_tokens,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::InvalidRequest(m.to_string()));
        if self.model_name.is_empty() {
            return bad("empty model name");
        }
        if self.messages.is_empty() {
            return bad("no messages");
        }
        if self
            .messages
            .iter()
            .skip(1)
            .any(|m| m.role == Role::System)
        {
            return bad("system message must come first");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be finite and non-negative");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// Body sent on the wire.
    pub fn wire_body(&self) -> Value {
        let mut body = json!({
            "model": self.model_name,
            "messages": self.messages,
            "temperature": normalized_temperature(self.temperature),
            "max_tokens": self.max_tokens,
        });
        if let Some(stop) = &self.stop {
            body["stop"] = json!(stop);
        }
        body
    }

    /// SHA-256 over the canonical serialization of
    /// (model, messages, temperature, max_tokens, stop).
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            model: &'a str,
            messages: &'a [ChatMessage],
            temperature: f64,
            max_tokens: u32,
            stop: &'a Option<Vec<String>>,
        }
        let key = Key {
            model: &self.model_name,
            messages: &self.messages,
            temperature: normalized_temperature(self.temperature),
            max_tokens: self.max_tokens,
            stop: &self.stop,
        };
        sha256_hex(&serde_json::to_vec(&key).expect("fingerprint key serializes"))
    }
}

fn normalized_temperature(t: f64) -> f64 {
    // -0.0 and 0.0 must hash identically
    if t == 0.0 {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResult {
    pub text: String,
    pub request_fingerprint: String,
    pub from_cache: bool,
    pub latency_ms: u64,
    /// HTTP attempts made; 0 for cache hits.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub retryable_statuses: BTreeSet<u16>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 500,
            backoff_multiplier: 2.0,
            retryable_statuses: [408, 429, 500, 502, 503, 504].into_iter().collect(),
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_attempts == 0 {
            return Err(ClientError::InvalidRequest("max_attempts must be ≥ 1".into()));
        }
        if !(self.backoff_multiplier >= 1.0 && self.backoff_multiplier.is_finite()) {
            return Err(ClientError::InvalidRequest("backoff_multiplier must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.backoff_multiplier.powi(retry.saturating_sub(1) as i32);
        Duration::from_millis((self.base_backoff_ms as f64 * factor).min(u64::MAX as f64 / 2.0) as u64)
    }
}

/// Base URL plus credentials, shared by the chat and embedding clients.
#[derive(Debug)]
pub struct HttpEndpoint {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    network_calls: AtomicU64,
}

impl HttpEndpoint {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent,
            network_calls: AtomicU64::new(0),
        }
    }

    /// Reads the bearer token from `env_var` when it is set.
    pub fn from_env(base_url: &str, env_var: &str, timeout: Duration) -> Self {
        Self::new(base_url, std::env::var(env_var).ok().filter(|k| !k.is_empty()), timeout)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// HTTP attempts made so far.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// POSTs `body` with retries; returns the parsed JSON and the attempt count.
    pub fn post_json(
        &self,
        path: &str,
        body: &Value,
        policy: &RetryPolicy,
    ) -> Result<(Value, u32), ClientError> {
        policy.validate()?;
        let url = format!("{}{}", self.base_url, path);
        let mut last_error = String::new();
        for attempt in 1..=policy.max_attempts {
            if attempt > 1 {
                std::thread::sleep(policy.backoff(attempt - 1));
            }
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = match req.send(serde_json::to_vec(body).expect("body serializes")) {
                Ok(resp) => resp,
                Err(e) => {
                    log::debug!("attempt {attempt} to {url} failed: {e}");
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if (200..300).contains(&status) {
                let value: Value = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| ClientError::ResponseSchemaError(e.to_string()))?;
                return Ok((value, attempt));
            }
            if !policy.retryable_statuses.contains(&status) {
                return Err(ClientError::NonRetryableStatus(status));
            }
            log::debug!("attempt {attempt} to {url} returned {status}");
            last_error = format!("status {status}");
        }
        Err(ClientError::EndpointUnreachable {
            attempts: policy.max_attempts,
            last_error,
        })
    }
}

fn extract_content(v: &Value) -> Result<String, ClientError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            ClientError::ResponseSchemaError("missing choices[0].message.content".into())
        })
}

pub struct ChatClient {
    endpoint: HttpEndpoint,
    cache: Arc<ResponseCache>,
    cache_hits: AtomicU64,
}

impl ChatClient {
    pub fn new(endpoint: HttpEndpoint, cache: Arc<ResponseCache>) -> Self {
        Self {
            endpoint,
            cache,
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn endpoint(&self) -> &HttpEndpoint {
        &self.endpoint
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn network_calls(&self) -> u64 {
        self.endpoint.network_calls()
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn complete(
        &self,
        req: &CompletionRequest,
        policy: &RetryPolicy,
    ) -> Result<CompletionResult, ClientError> {
        req.validate()?;
        let fingerprint = req.fingerprint();
        let started = Instant::now();
        if let Some(Value::String(text)) = self.cache.get(&fingerprint) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(CompletionResult {
                text,
                request_fingerprint: fingerprint,
                from_cache: true,
                latency_ms: started.elapsed().as_millis() as u64,
                attempts: 0,
            });
        }
        let body = req.wire_body();
        let (response, attempts) = self.endpoint.post_json(CHAT_COMPLETIONS_PATH, &body, policy)?;
        let text = extract_content(&response)?;
        self.cache
            .insert(&fingerprint, body, Value::String(text.clone()))
            .map_err(|e| ClientError::Cache(e.to_string()))?;
        Ok(CompletionResult {
            text,
            request_fingerprint: fingerprint,
            from_cache: false,
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
        })
    }

    /// Runs `reqs` with at most `max_in_flight` outstanding at once (values
    /// below 1 are treated as 1). Results line up with `reqs`; a failing item
    /// does not stop the rest.
    pub fn complete_batch(
        &self,
        reqs: &[CompletionRequest],
        policy: &RetryPolicy,
        max_in_flight: usize,
    ) -> Vec<Result<CompletionResult, ClientError>> {
        let workers = max_in_flight.max(1).min(reqs.len());
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<CompletionResult, ClientError>>>> =
            Mutex::new(vec![None; reqs.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = reqs.get(i) else { break };
                    let res = self.complete(req, policy);
                    slots.lock().unwrap()[i] = Some(res);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

//! Instrumented mock of a chat-completions / embeddings server.
//!
//! Answers are a deterministic function of the request, so pipelines run
//! against it are reproducible. The server records request counts, the peak
//! number of concurrently handled requests and the last `Authorization`
//! header, and can be scripted to return error statuses first.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use crate::digest::sha256_hex;
use crate::metrics_sum::hashed_unit_vector;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockChatRequest {
    pub model: String,
    pub system: Option<String>,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Status(u16),
}

type Responder = Arc<dyn Fn(&MockChatRequest) -> MockReply + Send + Sync>;

#[derive(Debug, Default)]
pub struct MockStats {
    requests: AtomicUsize,
    embedding_requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    last_authorization: Mutex<Option<String>>,
}

impl MockStats {
    /// Chat-completion requests received, including scripted failures.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn embedding_requests(&self) -> usize {
        self.embedding_requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn last_authorization(&self) -> Option<String> {
        self.last_authorization.lock().unwrap().clone()
    }
}

pub struct MockServerBuilder {
    addr: String,
    delay: Duration,
    script: Vec<u16>,
    responder: Responder,
    raw_body: Option<String>,
    embedding_dim: usize,
}

impl MockServerBuilder {
    /// Defaults to an ephemeral port on localhost.
    pub fn bind(mut self, addr: impl Into<String>) -> Self {
        self.addr = addr.into();
        self
    }

    /// Time each request is held before answering.
    pub fn delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    /// Statuses returned, in order, to the first chat requests.
    pub fn script(mut self, statuses: impl IntoIterator<Item = u16>) -> Self {
        self.script = statuses.into_iter().collect();
        self
    }

    pub fn responder(
        mut self,
        f: impl Fn(&MockChatRequest) -> MockReply + Send + Sync + 'static,
    ) -> Self {
        self.responder = Arc::new(f);
        self
    }

    /// Replace every successful chat response body with `body` verbatim.
    pub fn raw_body(mut self, body: impl Into<String>) -> Self {
        self.raw_body = Some(body.into());
        self
    }

    pub fn embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim;
        self
    }

    pub fn build(self) -> MockServer {
        self.try_build().expect("mock server binds")
    }

    pub fn try_build(self) -> std::io::Result<MockServer> {
        let server = Arc::new(tiny_http::Server::http(&self.addr).map_err(std::io::Error::other)?);
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("mock server needs an IP address"))?;
        let host = self.addr.rsplit_once(':').map(|(h, _)| h).unwrap_or("127.0.0.1");
        let url = format!("http://{host}:{port}");
        let stats = Arc::new(MockStats::default());
        let shared = Arc::new(Shared {
            delay: self.delay,
            script: Mutex::new(self.script.into()),
            responder: self.responder,
            raw_body: self.raw_body,
            embedding_dim: self.embedding_dim,
            stats: stats.clone(),
        });
        let accept = {
            let server = server.clone();
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    let shared = shared.clone();
                    std::thread::spawn(move || shared.handle(request));
                }
            })
        };
        Ok(MockServer {
            url,
            stats,
            server,
            accept: Some(accept),
        })
    }
}

pub struct MockServer {
    url: String,
    stats: Arc<MockStats>,
    server: Arc<tiny_http::Server>,
    accept: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn builder() -> MockServerBuilder {
        MockServerBuilder {
            addr: "127.0.0.1:0".into(),
            delay: Duration::ZERO,
            script: Vec::new(),
            responder: Arc::new(finance_responder),
            raw_body: None,
            embedding_dim: 32,
        }
    }

    /// Starts a server with the default finance responder.
    pub fn start() -> Self {
        Self::builder().build()
    }

    pub fn url(&self) -> String {
        self.url.clone()
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

struct Shared {
    delay: Duration,
    script: Mutex<VecDeque<u16>>,
    responder: Responder,
    raw_body: Option<String>,
    embedding_dim: usize,
    stats: Arc<MockStats>,
}

impl Shared {
    fn handle(&self, mut request: tiny_http::Request) {
        let now = self.stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(h) = request
            .headers()
            .iter()
            .find(|h| h.field.equiv("Authorization"))
        {
            *self.stats.last_authorization.lock().unwrap() = Some(h.value.to_string());
        }
        let mut body = String::new();
        let read = request.as_reader().read_to_string(&mut body);
        std::thread::sleep(self.delay);
        let (status, payload) = match read {
            Err(e) => (400, json!({"error": e.to_string()}).to_string()),
            Ok(_) => self.route(request.url(), &body),
        };
        self.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
        let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
            .expect("static header");
        let _ = request.respond(
            tiny_http::Response::from_string(payload)
                .with_status_code(status)
                .with_header(header),
        );
    }

    fn route(&self, url: &str, body: &str) -> (u16, String) {
        let parsed: Value = match serde_json::from_str(body) {
            Ok(v) => v,
            Err(e) => return (400, json!({"error": e.to_string()}).to_string()),
        };
        if url.ends_with("/embeddings") {
            self.stats.embedding_requests.fetch_add(1, Ordering::SeqCst);
            return self.embeddings(&parsed);
        }
        if !url.ends_with("/chat/completions") {
            return (404, json!({"error": "not found"}).to_string());
        }
        self.stats.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(status) = self.script.lock().unwrap().pop_front() {
            return (status, json!({"error": "scripted failure"}).to_string());
        }
        let Some(req) = chat_request(&parsed) else {
            return (400, json!({"error": "bad chat request"}).to_string());
        };
        match (self.responder)(&req) {
            MockReply::Status(code) => (code, json!({"error": "responder failure"}).to_string()),
            MockReply::Text(text) => {
                if let Some(raw) = &self.raw_body {
                    return (200, raw.clone());
                }
                let body = json!({
                    "id": "mock",
                    "object": "chat.completion",
                    "model": req.model,
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": text},
                        "finish_reason": "stop"
                    }]
                });
                (200, body.to_string())
            }
        }
    }

    fn embeddings(&self, v: &Value) -> (u16, String) {
        let Some(inputs) = v.get("input").and_then(Value::as_array) else {
            return (400, json!({"error": "input must be a list"}).to_string());
        };
        let data: Vec<Value> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let token = t.as_str().unwrap_or_default();
                json!({"index": i, "embedding": hashed_unit_vector(token, self.embedding_dim)})
            })
            .collect();
        (200, json!({"object": "list", "data": data}).to_string())
    }
}

fn chat_request(v: &Value) -> Option<MockChatRequest> {
    let model = v.get("model")?.as_str()?.to_string();
    let messages = v.get("messages")?.as_array()?;
    let mut system = None;
    let mut user = String::new();
    for m in messages {
        let content = m.get("content")?.as_str()?.to_string();
        match m.get("role")?.as_str()? {
            "system" => system = Some(content),
            _ => user = content,
        }
    }
    Some(MockChatRequest { model, system, user })
}

fn pick(seed: &str, salt: &str, n: usize) -> usize {
    let h = sha256_hex(format!("{salt}:{seed}").as_bytes());
    usize::from_str_radix(&h[..8], 16).expect("hex digest") % n
}

/// Default behaviour: recognises the task from the answer hint in the prompt
/// and replies in one of several phrasings, the way chatty instruction-tuned
/// models do.
pub fn finance_responder(req: &MockChatRequest) -> MockReply {
    let text = req.user.to_lowercase();
    let reply = if text.contains("buy") && text.contains("sell") && text.contains("hold") {
        let action = ["buy", "sell", "hold"][pick(&req.user, "action", 3)];
        match pick(&req.user, "style", 4) {
            0 => format!("Decision: {}", action.to_uppercase()),
            1 => action.to_string(),
            2 => format!("Based on the recent news flow, my recommendation is to {action} the stock today."),
            _ => format!("**{}**\n\nThe momentum signals support this position.", capitalize(action)),
        }
    } else if text.contains("claim") && text.contains("premise") {
        let sentence = payload_paragraph(&req.user).to_lowercase();
        let forward_looking = ["expect", "believe", "will", "think", "confident", "should", "anticipate"]
            .iter()
            .any(|w| sentence.split(|c: char| !c.is_alphanumeric()).any(|t| t == *w));
        let label = if forward_looking { "claim" } else { "premise" };
        match pick(&req.user, "style", 4) {
            0 => label.to_string(),
            1 => format!("The answer is: {}.", capitalize(label)),
            2 => format!("Based on the context provided, this sentence is a {label} because of how it is phrased."),
            _ => format!("**{}**", capitalize(label)),
        }
    } else {
        let doc = payload_paragraph(&req.user);
        let first = doc
            .split_inclusive(['.', '!', '?'])
            .next()
            .unwrap_or(doc)
            .split_whitespace()
            .take(40)
            .collect::<Vec<_>>()
            .join(" ");
        match pick(&req.user, "style", 2) {
            0 => format!("Summary: {first}"),
            _ => format!("\"{first}\""),
        }
    };
    MockReply::Text(reply)
}

// The last paragraph that is not the answer-format hint; prompts put the
// input after the instruction.
fn payload_paragraph(text: &str) -> &str {
    text.split("\n\n")
        .filter(|p| {
            let p = p.trim_start().to_lowercase();
            !p.is_empty() && !(p.starts_with("answer with") || p.starts_with("reply with"))
        })
        .last()
        .unwrap_or(text)
        .trim()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> MockChatRequest {
        MockChatRequest {
            model: "m".into(),
            system: None,
            user: user.into(),
        }
    }

    #[test]
    fn responder_is_deterministic_and_task_aware() {
        let cls = req("Classify.\n\nWe expect margins to expand.\n\nAnswer with exactly one word from: claim, premise.");
        assert_eq!(finance_responder(&cls), finance_responder(&cls));
        let MockReply::Text(t) = finance_responder(&cls) else { panic!() };
        assert!(t.to_lowercase().contains("claim"), "{t}");

        let MockReply::Text(t) = finance_responder(&req("Trade.\n\nNews.\n\nAnswer with exactly one word: buy, sell or hold.")) else {
            panic!()
        };
        let lower = t.to_lowercase();
        assert!(["buy", "sell", "hold"].iter().any(|a| lower.contains(a)));

        let MockReply::Text(t) = finance_responder(&req("Summarize.\n\nShares of ACME rose 5% on Monday. Analysts cheered.")) else {
            panic!()
        };
        assert!(t.contains("Shares of ACME rose 5% on Monday."), "{t}");
    }
}

//! Backend-agnostic chat-completion client.
//!
//! [`Gateway`] wraps a [`ChatBackend`] with transport retries, a bound on
//! in-flight requests, a JSONL request log and structured-output recovery:
//! direct parse, fence and prose stripping, balanced-bracket extraction, and
//! finally a corrective re-prompt.

mod extract;
mod http;
mod mock;
mod schema;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use extract::extract_json;
pub use http::{HttpBackend, DEFAULT_API_KEY_ENV};
pub(crate) use http::{json_agent, post_json};
pub use mock::{MockBackend, MockFailure, MockReply, MockRule, MockScript};
pub use schema::{parse_percent, Field, SchemaError, SchemaSpec, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Assistant, content)
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Tool, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts after the first, for transport failures and for
    /// corrective re-prompts alike.
    pub retries: u32,
    pub request_timeout_secs: u64,
    /// Base delay of the exponential transport backoff.
    pub backoff_ms: u64,
    /// Maximum number of requests in flight through one gateway.
    pub parallelism: usize,
    /// When false, `tool` messages are folded into the preceding user message.
    pub tool_role: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model_name: "gpt-4o-2024-08-06".into(),
            temperature: 0.9,
            max_tokens: 4096,
            retries: 2,
            request_timeout_secs: 120,
            backoff_ms: 500,
            parallelism: 4,
            tool_role: true,
        }
    }
}

impl GenerationConfig {
    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }
}

/// One request as seen by a backend.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub stage_tag: String,
    pub messages: Vec<ChatMessage>,
    pub config: GenerationConfig,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no scripted response for stage {0:?}")]
    Unscripted(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend refused the request with status {status}: {body}")]
    BackendRefusal { status: u16, body: String },
    #[error("no scripted response for stage {0:?}")]
    UnscriptedRequest(String),
    #[error("output violates schema {schema} after {attempts} attempts: {reason}")]
    SchemaViolation {
        schema: String,
        reason: String,
        last_raw: String,
        attempts: u32,
    },
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// One line of the request log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp: String,
    pub stage_tag: String,
    pub messages: Vec<ChatMessage>,
    pub raw_response: Option<String>,
    pub parsed_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

enum LogSink {
    File(File),
    Memory(Vec<LogRecord>),
}

/// Append-only request log, either a JSONL file or an in-memory buffer.
pub struct RequestLog {
    sink: Mutex<LogSink>,
}

impl RequestLog {
    pub fn open(path: &Path) -> std::io::Result<RequestLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RequestLog {
            sink: Mutex::new(LogSink::File(file)),
        })
    }

    pub fn in_memory() -> RequestLog {
        RequestLog {
            sink: Mutex::new(LogSink::Memory(Vec::new())),
        }
    }

    fn append(&self, record: LogRecord) {
        let mut sink = self.sink.lock().expect("request log poisoned");
        match &mut *sink {
            LogSink::File(f) => {
                let line = serde_json::to_string(&record).expect("log record serializes");
                if let Err(e) = writeln!(f, "{line}") {
                    tracing::warn!("failed to append to request log: {e}");
                }
            }
            LogSink::Memory(v) => v.push(record),
        }
    }

    /// Records held in memory; empty for file-backed logs.
    pub fn records(&self) -> Vec<LogRecord> {
        match &*self.sink.lock().expect("request log poisoned") {
            LogSink::Memory(v) => v.clone(),
            LogSink::File(_) => Vec::new(),
        }
    }
}

struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Result of a structured completion.
#[derive(Debug, Clone)]
pub struct Structured<T> {
    pub value: T,
    pub json: Value,
    pub raw: String,
    pub attempts: u32,
}

struct Inner {
    backend: Arc<dyn ChatBackend>,
    config: GenerationConfig,
    log: Option<Arc<RequestLog>>,
    permits: Semaphore,
}

/// Shareable handle; clones share the backend, log and parallelism bound.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("config", &self.inner.config)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, config: GenerationConfig) -> Gateway {
        Gateway::with_log(backend, config, None)
    }

    pub fn with_log(
        backend: Arc<dyn ChatBackend>,
        config: GenerationConfig,
        log: Option<Arc<RequestLog>>,
    ) -> Gateway {
        let permits = Semaphore::new(config.parallelism);
        Gateway {
            inner: Arc::new(Inner {
                backend,
                config,
                log,
                permits,
            }),
        }
    }

    pub fn mock(mock: MockBackend) -> Gateway {
        let config = GenerationConfig {
            backoff_ms: 0,
            ..GenerationConfig::default()
        };
        Gateway::new(Arc::new(mock), config)
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.inner.config
    }

    pub fn log(&self) -> Option<&Arc<RequestLog>> {
        self.inner.log.as_ref()
    }

    fn validate(messages: &[ChatMessage]) -> Result<(), GatewayError> {
        let first = messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("message list is empty".into()))?;
        if first.role != ChatRole::System {
            return Err(GatewayError::InvalidRequest(
                "first message must have the system role".into(),
            ));
        }
        if let Some(i) = messages.iter().position(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("message {i} is empty")));
        }
        Ok(())
    }

    fn prepare(&self, messages: &[ChatMessage]) -> Vec<ChatMessage> {
        if self.inner.config.tool_role {
            return messages.to_vec();
        }
        let mut out: Vec<ChatMessage> = Vec::with_capacity(messages.len());
        for m in messages {
            match (m.role, out.last_mut()) {
                (ChatRole::Tool, Some(prev)) if prev.role == ChatRole::User => {
                    prev.content.push_str("\n\nTool output:\n");
                    prev.content.push_str(&m.content);
                }
                (ChatRole::Tool, _) => {
                    out.push(ChatMessage::user(format!("Tool output:\n{}", m.content)))
                }
                _ => out.push(m.clone()),
            }
        }
        out
    }

    fn record(&self, stage_tag: &str, messages: &[ChatMessage], raw: Option<&str>, parsed_ok: bool, error: Option<String>) {
        if let Some(log) = &self.inner.log {
            log.append(LogRecord {
                timestamp: chrono::Utc::now().to_rfc3339(),
                stage_tag: stage_tag.to_string(),
                messages: messages.to_vec(),
                raw_response: raw.map(str::to_string),
                parsed_ok,
                error,
            });
        }
    }

    fn send_with_retries(&self, stage_tag: &str, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        Gateway::validate(messages)?;
        let config = &self.inner.config;
        let request = ChatRequest {
            stage_tag: stage_tag.to_string(),
            messages: self.prepare(messages),
            config: config.clone(),
        };
        let _permit = self.inner.permits.acquire();
        let attempts = config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.inner.backend.send(&request) {
                Ok(text) => return Ok(text),
                Err(BackendError::Status { status, body }) if status != 429 && status < 500 => {
                    return Err(GatewayError::BackendRefusal { status, body });
                }
                Err(BackendError::Unscripted(tag)) => {
                    return Err(GatewayError::UnscriptedRequest(tag));
                }
                Err(e) => {
                    last = e.to_string();
                    tracing::debug!(stage_tag, attempt, "transport failure: {last}");
                    if attempt + 1 < attempts && config.backoff_ms > 0 {
                        let delay = config.backoff_ms.saturating_mul(1 << attempt.min(16));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }

    /// Raw assistant text for `messages`.
    pub fn complete(&self, stage_tag: &str, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        match self.send_with_retries(stage_tag, messages) {
            Ok(text) => {
                self.record(stage_tag, messages, Some(&text), true, None);
                Ok(text)
            }
            Err(e) => {
                self.record(stage_tag, messages, None, false, Some(e.to_string()));
                Err(e)
            }
        }
    }

    /// JSON output validated against `schema`.
    pub fn complete_structured(
        &self,
        stage_tag: &str,
        messages: &[ChatMessage],
        schema: &SchemaSpec,
    ) -> Result<Value, GatewayError> {
        self.complete_parsed(stage_tag, messages, schema, |v| Ok(v.clone()))
            .map(|s| s.value)
    }

    /// Like [`Gateway::complete_structured`], with an extra semantic check
    /// that converts the JSON into `T`. A failing check triggers the same
    /// corrective re-prompt as a schema violation.
    pub fn complete_parsed<T>(
        &self,
        stage_tag: &str,
        messages: &[ChatMessage],
        schema: &SchemaSpec,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<Structured<T>, GatewayError> {
        let mut transcript = messages.to_vec();
        let attempts = self.inner.config.retries + 1;
        let mut reason = String::new();
        let mut last_raw = String::new();
        for attempt in 1..=attempts {
            let raw = match self.send_with_retries(stage_tag, &transcript) {
                Ok(raw) => raw,
                Err(e) => {
                    self.record(stage_tag, &transcript, None, false, Some(e.to_string()));
                    return Err(e);
                }
            };
            let outcome = extract_json(&raw)
                .ok_or_else(|| "no JSON document found in the response".to_string())
                .and_then(|json| {
                    schema.validate(&json).map_err(|e| e.to_string())?;
                    let value = parse(&json)?;
                    Ok((value, json))
                });
            match outcome {
                Ok((value, json)) => {
                    self.record(stage_tag, &transcript, Some(&raw), true, None);
                    return Ok(Structured {
                        value,
                        json,
                        raw,
                        attempts: attempt,
                    });
                }
                Err(why) => {
                    self.record(stage_tag, &transcript, Some(&raw), false, Some(why.clone()));
                    let shown = if raw.trim().is_empty() { "(empty response)" } else { raw.as_str() };
                    transcript.push(ChatMessage::assistant(shown));
                    transcript.push(ChatMessage::user(corrective_message(&why)));
                    reason = why;
                    last_raw = raw;
                }
            }
        }
        Err(GatewayError::SchemaViolation {
            schema: schema.name.clone(),
            reason,
            last_raw,
            attempts,
        })
    }
}

pub fn corrective_message(reason: &str) -> String {
    format!(
        "Your previous output could not be used ({reason}). Only output the JSON results and make sure the keys are the same as presented in the example output."
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn msgs() -> Vec<ChatMessage> {
        vec![ChatMessage::system("sys"), ChatMessage::user("hi")]
    }

    fn stress_schema() -> SchemaSpec {
        SchemaSpec::new(
            "stress",
            Shape::Object(vec![Field::required(
                "features",
                Shape::array(Shape::Object(vec![Field::required(
                    "stress_level",
                    Shape::Integer { min: 0, max: 100 },
                )])),
            )]),
        )
    }

    #[test]
    fn echo() {
        let gw = Gateway::mock(MockBackend::new().on("t", "hello"));
        assert_eq!(gw.complete("t", &msgs()).unwrap(), "hello");
    }

    #[test]
    fn precondition_errors() {
        let gw = Gateway::mock(MockBackend::new().on("t", "hello"));
        assert!(matches!(gw.complete("t", &[]), Err(GatewayError::InvalidRequest(_))));
        assert!(matches!(
            gw.complete("t", &[ChatMessage::user("x")]),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert!(matches!(
            gw.complete("t", &[ChatMessage::system("s"), ChatMessage::user(" ")]),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn transport_failure_reports_attempts() {
        let fail = MockReply::Failure(MockFailure {
            status: 503,
            body: "unavailable".into(),
        });
        let mock = MockBackend::new().on("t", fail);
        let gw = Gateway::mock(mock);
        match gw.complete("t", &msgs()) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transport_recovers_within_retries() {
        let fail = MockReply::Failure(MockFailure {
            status: 0,
            body: "reset".into(),
        });
        let mock = MockBackend::new().on_sequence("t", None, [fail, "ok".into()]);
        assert_eq!(Gateway::mock(mock).complete("t", &msgs()).unwrap(), "ok");
    }

    #[test]
    fn refusal_keeps_body() {
        let mock = MockBackend::new().on(
            "t",
            MockReply::Failure(MockFailure {
                status: 400,
                body: "bad model".into(),
            }),
        );
        assert_eq!(
            Gateway::mock(mock).complete("t", &msgs()),
            Err(GatewayError::BackendRefusal {
                status: 400,
                body: "bad model".into()
            })
        );
    }

    #[test]
    fn unscripted_is_loud() {
        let gw = Gateway::mock(MockBackend::new());
        assert_eq!(
            gw.complete("nothing", &msgs()),
            Err(GatewayError::UnscriptedRequest("nothing".into()))
        );
    }

    #[test]
    fn structured_strips_fences() {
        let gw = Gateway::mock(MockBackend::new().on("s", "```json\n{\"features\": []}\n```"));
        let v = gw.complete_structured("s", &msgs(), &stress_schema()).unwrap();
        assert_eq!(v, json!({"features": []}));
    }

    #[test]
    fn structured_reprompts_once() {
        let mock = MockBackend::new().on_sequence(
            "s",
            None,
            [
                r#"{"features": [{"value": "x"}]}"#,
                r#"{"features": [{"stress_level": 40}]}"#,
            ],
        );
        let log = Arc::new(RequestLog::in_memory());
        let config = GenerationConfig {
            backoff_ms: 0,
            ..Default::default()
        };
        let gw = Gateway::with_log(Arc::new(mock), config, Some(log.clone()));
        let out = gw
            .complete_parsed("s", &msgs(), &stress_schema(), |v| Ok(v.clone()))
            .unwrap();
        assert_eq!(out.attempts, 2);
        let records = log.records();
        assert_eq!(records.len(), 2);
        assert!(!records[0].parsed_ok);
        assert!(records[1].parsed_ok);
        // the corrective turn carries the rejected output and a user instruction
        let second = &records[1].messages;
        assert_eq!(second.len(), 4);
        assert_eq!(second[2].role, ChatRole::Assistant);
        assert_eq!(second[3].role, ChatRole::User);
        assert!(second[3].content.contains("stress_level"));
    }

    #[test]
    fn structured_gives_up() {
        let gw = Gateway::mock(MockBackend::new().on("s", "total garbage"));
        match gw.complete_structured("s", &msgs(), &stress_schema()) {
            Err(GatewayError::SchemaViolation { attempts, last_raw, .. }) => {
                assert_eq!(attempts, 3);
                assert_eq!(last_raw, "total garbage");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tool_messages_fold_when_disabled() {
        let config = GenerationConfig {
            tool_role: false,
            ..Default::default()
        };
        let gw = Gateway::new(Arc::new(MockBackend::new()), config);
        let folded = gw.prepare(&[
            ChatMessage::system("s"),
            ChatMessage::user("u"),
            ChatMessage::tool("t"),
        ]);
        assert_eq!(folded.len(), 2);
        assert_eq!(folded[1].content, "u\n\nTool output:\nt");
    }

    #[test]
    fn parallelism_is_bounded() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Slow {
            live: AtomicUsize,
            peak: AtomicUsize,
        }
        impl ChatBackend for Slow {
            fn send(&self, _: &ChatRequest) -> Result<String, BackendError> {
                let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.live.fetch_sub(1, Ordering::SeqCst);
                Ok("x".into())
            }
        }
        let slow = Arc::new(Slow {
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let config = GenerationConfig {
            parallelism: 2,
            ..Default::default()
        };
        let gw = Gateway::new(slow.clone(), config);
        std::thread::scope(|s| {
            for _ in 0..8 {
                let gw = gw.clone();
                s.spawn(move || gw.complete("t", &msgs()).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}

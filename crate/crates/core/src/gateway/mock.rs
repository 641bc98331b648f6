//! Scripted backend for deterministic runs.
//!
//! Requests are matched by stage tag and an optional substring of the
//! transcript. Rules with a substring are tried before tag-only rules, each
//! group in insertion order. A rule with several replies hands them out in
//! order and then keeps repeating the last one. Requests that match no rule
//! fail with [`BackendError::Unscripted`].

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Failure(MockFailure),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFailure {
    /// HTTP-like status code; 0 means a transport failure.
    pub status: u16,
    #[serde(default)]
    pub body: String,
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Text(s.to_string())
    }
}

impl From<String> for MockReply {
    fn from(s: String) -> Self {
        MockReply::Text(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub stage_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub replies: Vec<MockReply>,
}

/// Serializable script, loadable from a JSON file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

type Responder = Box<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

struct ArmedRule {
    rule: MockRule,
    cursor: AtomicUsize,
}

#[derive(Default)]
pub struct MockBackend {
    rules: Vec<ArmedRule>,
    responder: Option<Responder>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("rules", &self.rules.len())
            .field("calls", &self.calls.load(Ordering::Relaxed))
            .finish()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: MockScript) -> Self {
        let mut mock = MockBackend::new();
        for rule in script.rules {
            mock.push(rule);
        }
        mock
    }

    fn push(&mut self, rule: MockRule) {
        assert!(!rule.replies.is_empty(), "mock rule needs at least one reply");
        self.rules.push(ArmedRule {
            rule,
            cursor: AtomicUsize::new(0),
        });
    }

    /// Always answer requests tagged `stage_tag` with `reply`.
    pub fn on(mut self, stage_tag: &str, reply: impl Into<MockReply>) -> Self {
        self.push(MockRule {
            stage_tag: stage_tag.into(),
            contains: None,
            replies: vec![reply.into()],
        });
        self
    }

    /// Answer requests tagged `stage_tag` whose transcript contains `needle`.
    pub fn on_contains(mut self, stage_tag: &str, needle: &str, reply: impl Into<MockReply>) -> Self {
        self.push(MockRule {
            stage_tag: stage_tag.into(),
            contains: Some(needle.into()),
            replies: vec![reply.into()],
        });
        self
    }

    pub fn on_sequence<R: Into<MockReply>>(
        mut self,
        stage_tag: &str,
        contains: Option<&str>,
        replies: impl IntoIterator<Item = R>,
    ) -> Self {
        self.push(MockRule {
            stage_tag: stage_tag.into(),
            contains: contains.map(String::from),
            replies: replies.into_iter().map(Into::into).collect(),
        });
        self
    }

    /// Fallback consulted when no rule matches.
    pub fn with_responder(
        mut self,
        responder: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(responder));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn find(&self, request: &ChatRequest) -> Option<&ArmedRule> {
        let transcript = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let tagged = self.rules.iter().filter(|r| r.rule.stage_tag == request.stage_tag);
        tagged
            .clone()
            .find(|r| {
                r.rule
                    .contains
                    .as_deref()
                    .is_some_and(|needle| transcript.contains(needle))
            })
            .or_else(|| tagged.clone().find(|r| r.rule.contains.is_none()))
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let Some(armed) = self.find(request) else {
            return match self.responder.as_ref().and_then(|f| f(request)) {
                Some(text) => Ok(text),
                None => Err(BackendError::Unscripted(request.stage_tag.clone())),
            };
        };
        let idx = armed.cursor.fetch_add(1, Ordering::SeqCst);
        let replies = &armed.rule.replies;
        match &replies[idx.min(replies.len() - 1)] {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Failure(f) if f.status == 0 => Err(BackendError::Transport(f.body.clone())),
            MockReply::Failure(f) => Err(BackendError::Status {
                status: f.status,
                body: f.body.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, GenerationConfig};

    fn req(tag: &str, text: &str) -> ChatRequest {
        ChatRequest {
            stage_tag: tag.into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(text)],
            config: GenerationConfig::default(),
        }
    }

    #[test]
    fn matches_by_tag_and_substring() {
        let mock = MockBackend::new()
            .on("synthesis", "generic")
            .on_contains("synthesis", "family", "specific");
        assert_eq!(mock.send(&req("synthesis", "about family")).unwrap(), "specific");
        assert_eq!(mock.send(&req("synthesis", "about work")).unwrap(), "generic");
        assert!(matches!(
            mock.send(&req("stress_scoring", "x")),
            Err(BackendError::Unscripted(tag)) if tag == "stress_scoring"
        ));
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn sequence_repeats_last() {
        let mock = MockBackend::new().on_sequence("s", None, ["one", "two"]);
        let got: Vec<_> = (0..4).map(|_| mock.send(&req("s", "")).unwrap()).collect();
        assert_eq!(got, ["one", "two", "two", "two"]);
    }

    #[test]
    fn script_roundtrip_and_failures() {
        let script: MockScript = serde_json::from_str(
            r#"{"rules": [{"stage_tag": "a", "replies": [{"status": 503, "body": "busy"}, "ok"]}]}"#,
        )
        .unwrap();
        let mock = MockBackend::from_script(script);
        assert!(matches!(
            mock.send(&req("a", "")),
            Err(BackendError::Status { status: 503, .. })
        ));
        assert_eq!(mock.send(&req("a", "")).unwrap(), "ok");
    }
}

//! Chat-completion backend speaking the common JSON-over-HTTP protocol
//! (`POST {base_url}/chat/completions`, bearer token auth).

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest};

pub const DEFAULT_API_KEY_ENV: &str = "SURVEY_SIM_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> HttpBackend {
        HttpBackend {
            agent: json_agent(timeout),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        }
    }

    /// Reads the bearer token from `key_env`; a missing variable means no auth header.
    pub fn from_env(base_url: &str, key_env: &str, timeout: Duration) -> HttpBackend {
        HttpBackend::new(base_url, std::env::var(key_env).ok(), timeout)
    }
}

pub(crate) fn json_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs `body` and returns the decoded JSON response.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, BackendError> {
    let mut request = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        request = request.header("Authorization", format!("Bearer {key}"));
    }
    let mut response = request
        .send_json(body)
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(BackendError::Status { status, body: text });
    }
    serde_json::from_str(&text)
        .map_err(|e| BackendError::Transport(format!("undecodable response body: {e}")))
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": request.config.model_name,
            "messages": request.messages,
            "temperature": request.config.temperature,
            "max_tokens": request.config.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let value = post_json(&self.agent, &url, self.api_key.as_deref(), &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }
}

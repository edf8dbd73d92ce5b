//! Chat-completion HTTP adapter.
//!
//! Speaks the common `POST {base_url}/chat/completions` shape: a model name,
//! an optional system message, one user message and any sampling fields.
//! The bearer token comes from `PHASEPROBE_API_KEY_<PROVIDER_ID>`.

use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, ConfigError, ProviderConfig};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(180);

/// Environment variable holding the API key for `provider_id`.
///
/// The id is upper-cased and every character outside `[A-Z0-9]` becomes `_`.
pub fn api_key_env_var(provider_id: &str) -> String {
    let suffix: String = provider_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("PHASEPROBE_API_KEY_{suffix}")
}

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let api_key = std::env::var(api_key_env_var(&config.provider_id)).ok();
        Ok(Self::new(&config.base_url, api_key))
    }

    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(REQUEST_TIMEOUT))
            .build()
            .into();
        HttpBackend {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

/// Request body: sampling fields first, then `model` and `messages`, which
/// always win over a sampling key of the same name.
pub(crate) fn request_body(request: &ChatRequest) -> Value {
    let mut body: Map<String, Value> = request
        .sampling()
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    body.insert("model".into(), json!(request.model()));
    body.insert("messages".into(), json!(request.messages()));
    Value::Object(body)
}

fn looks_like_content_block(body: &Value) -> bool {
    let err = &body["error"];
    [&err["code"], &err["type"]].iter().any(|v| {
        v.as_str().is_some_and(|s| {
            s.contains("content_filter") || s.contains("content_policy") || s.contains("safety")
        })
    })
}

/// Maps an HTTP status and decoded body to a reply or a classified error.
pub(crate) fn interpret_response(status: u16, body: &Value) -> Result<ChatReply, BackendError> {
    match status {
        200..=299 => {
            let choice = &body["choices"][0];
            if choice["finish_reason"].as_str() == Some("content_filter") {
                return Err(BackendError::Blocked("finish_reason=content_filter".into()));
            }
            match choice["message"]["content"].as_str() {
                Some(text) => Ok(ChatReply {
                    text: text.to_string(),
                }),
                None => Err(BackendError::Fatal(
                    "response has no choices[0].message.content".into(),
                )),
            }
        }
        408 | 429 | 500..=599 => Err(BackendError::Transient(format!("HTTP {status}"))),
        _ if looks_like_content_block(body) => Err(BackendError::Blocked(format!(
            "HTTP {status}: {}",
            body["error"]["message"]
                .as_str()
                .unwrap_or("content blocked")
        ))),
        _ => Err(BackendError::Fatal(format!(
            "HTTP {status}: {}",
            body["error"]["message"]
                .as_str()
                .unwrap_or("request rejected")
        ))),
    }
}

/// Decodes a raw response body. Error statuses tolerate non-JSON bodies.
pub fn decode_response(status: u16, text: &str) -> Result<ChatReply, BackendError> {
    let body: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(_) if (200..300).contains(&status) => {
            return Err(BackendError::Fatal("response body is not JSON".into()))
        }
        Err(_) => Value::Null,
    };
    interpret_response(status, &body)
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(request_body(request))
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        decode_response(status, &text)
    }
}

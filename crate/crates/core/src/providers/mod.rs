//! Subject and evaluator model backends.
//!
//! Every exchange goes through [`Provider::complete_disposable`], which builds
//! a fresh single-turn request (optional system prompt plus exactly one user
//! message), sends it, and returns a [`SessionRecord`]. There is no handle
//! that could carry history from one exchange into the next.

mod http;
mod rate_limit;
mod replay;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{api_key_env_var, decode_response, HttpBackend};
pub use rate_limit::RateLimiter;
pub use replay::{load_replay_fixtures, ReplayBackend, ReplayError};
pub use scripted::ScriptedBackend;

const MAX_BACKOFF: Duration = Duration::from_secs(30);

fn default_backoff_ms() -> u64 {
    500
}

fn default_rate_limit() -> u32 {
    60
}

fn default_max_retries() -> u32 {
    3
}

/// Static configuration of one model endpoint.
///
/// `base_url` is either an HTTP(S) endpoint for a chat-completion API or
/// `replay:<dir>` for recorded fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub base_url: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    /// Sent verbatim with each request and recorded verbatim.
    #[serde(default)]
    pub sampling: BTreeMap<String, serde_json::Value>,
    /// Request starts per minute.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: u32,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Regexes that mark a completed response as a refusal.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refusal_patterns: Vec<String>,
    /// Base delay of the exponential retry backoff.
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

impl ProviderConfig {
    pub fn new(provider_id: &str, base_url: &str, model_name: &str) -> Self {
        ProviderConfig {
            provider_id: provider_id.to_string(),
            base_url: base_url.to_string(),
            model_name: model_name.to_string(),
            system_prompt: None,
            sampling: BTreeMap::new(),
            rate_limit: default_rate_limit(),
            max_retries: default_max_retries(),
            refusal_patterns: Vec::new(),
            retry_backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let id_ok = !self.provider_id.is_empty()
            && self
                .provider_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
        if !id_ok {
            return Err(ConfigError::InvalidProviderId(self.provider_id.clone()));
        }
        if self.rate_limit == 0 {
            return Err(ConfigError::ZeroRateLimit(self.provider_id.clone()));
        }
        if self.base_url.trim().is_empty() {
            return Err(ConfigError::MissingBaseUrl(self.provider_id.clone()));
        }
        for p in &self.refusal_patterns {
            Regex::new(p).map_err(|e| ConfigError::BadRefusalPattern(p.clone(), e.to_string()))?;
        }
        Ok(())
    }

    /// Replay directory when `base_url` has the `replay:` scheme.
    pub fn replay_dir(&self) -> Option<&Path> {
        self.base_url.strip_prefix("replay:").map(Path::new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("provider id {0:?} must be non-empty ASCII letters, digits, '_', '-' or '.'")]
    InvalidProviderId(String),
    #[error("provider {0}: rate_limit must be positive")]
    ZeroRateLimit(String),
    #[error("provider {0}: base_url is empty")]
    MissingBaseUrl(String),
    #[error("refusal pattern {0:?} is not a valid regex: {1}")]
    BadRefusalPattern(String, String),
    #[error("provider {0}: live mode needs an http(s) base_url, got {1:?}")]
    NotHttp(String, String),
    #[error("provider selector {0:?} must be replay:<dir> or live:<provider_id>")]
    BadSelector(String),
}

/// How a provider is reached, as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSelector {
    Replay(PathBuf),
    Live(String),
}

impl std::str::FromStr for BackendSelector {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(dir) = s.strip_prefix("replay:").filter(|d| !d.is_empty()) {
            Ok(BackendSelector::Replay(PathBuf::from(dir)))
        } else if let Some(id) = s.strip_prefix("live:").filter(|d| !d.is_empty()) {
            Ok(BackendSelector::Live(id.to_string()))
        } else {
            Err(ConfigError::BadSelector(s.to_string()))
        }
    }
}

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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

/// A single-turn request. The only constructor admits one user message.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    model: String,
    messages: Vec<ChatMessage>,
    sampling: BTreeMap<String, serde_json::Value>,
    prompt_id: String,
    trial_index: u32,
}

impl ChatRequest {
    pub fn single_turn(
        model: &str,
        system: Option<&str>,
        user: &str,
        sampling: &BTreeMap<String, serde_json::Value>,
        prompt_id: &str,
        trial_index: u32,
    ) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = system {
            messages.push(ChatMessage {
                role: Role::System,
                content: system.to_string(),
            });
        }
        messages.push(ChatMessage {
            role: Role::User,
            content: user.to_string(),
        });
        ChatRequest {
            model: model.to_string(),
            messages,
            sampling: sampling.clone(),
            prompt_id: prompt_id.to_string(),
            trial_index,
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn sampling(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.sampling
    }

    /// Routing key for replay; never sent over the wire.
    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn trial_index(&self) -> u32 {
        self.trial_index
    }

    pub fn user_turns(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .count()
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 429, 5xx.
    #[error("transient: {0}")]
    Transient(String),
    /// The platform blocked or filtered the exchange.
    #[error("blocked: {0}")]
    Blocked(String),
    /// Not worth retrying: bad request, missing fixture, malformed reply.
    #[error("fatal: {0}")]
    Fatal(String),
}

/// One model endpoint. Implementations must treat each call as an isolated
/// session.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

// ---------------------------------------------------------------------------
// Clock
// ---------------------------------------------------------------------------

/// Monotonic time source for rate limiting and backoff.
pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// A clock whose `sleep` advances time instantly. Records every sleep.
#[derive(Debug)]
pub struct ManualClock {
    start: Instant,
    state: std::sync::Mutex<(Duration, Vec<Duration>)>,
}

impl Default for ManualClock {
    fn default() -> Self {
        ManualClock {
            start: Instant::now(),
            state: std::sync::Mutex::new((Duration::ZERO, Vec::new())),
        }
    }
}

impl ManualClock {
    pub fn elapsed(&self) -> Duration {
        self.state.lock().expect("clock poisoned").0
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.state.lock().expect("clock poisoned").1.clone()
    }

    pub fn advance(&self, d: Duration) {
        self.state.lock().expect("clock poisoned").0 += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Instant {
        self.start + self.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        let mut state = self.state.lock().expect("clock poisoned");
        state.0 += duration;
        state.1.push(duration);
    }
}

// ---------------------------------------------------------------------------
// Session records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Refusal,
    TransportError,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Ok => "ok",
            Outcome::Refusal => "refusal",
            Outcome::TransportError => "transport_error",
        })
    }
}

/// One stateless prompt→response exchange with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub record_id: String,
    pub provider_id: String,
    pub model_name: String,
    pub prompt_id: String,
    pub trial_index: u32,
    pub request_text: String,
    pub response_text: String,
    pub sampling: BTreeMap<String, serde_json::Value>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub outcome: Outcome,
    /// Transport attempts made, including the successful one.
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("provider {} refused prompt {}", .0.provider_id, .0.prompt_id)]
    RefusalDetected(Box<SessionRecord>),
    #[error("provider {} failed after {} attempt(s): {}", .0.provider_id, .0.attempts, .0.error.as_deref().unwrap_or("unknown"))]
    TransportExhausted(Box<SessionRecord>),
}

impl SessionError {
    /// The failed exchange, when one was attempted.
    pub fn record(&self) -> Option<&SessionRecord> {
        match self {
            SessionError::EmptyPrompt => None,
            SessionError::RefusalDetected(r) | SessionError::TransportExhausted(r) => Some(r),
        }
    }

    pub fn into_record(self) -> Option<SessionRecord> {
        match self {
            SessionError::EmptyPrompt => None,
            SessionError::RefusalDetected(r) | SessionError::TransportExhausted(r) => Some(*r),
        }
    }
}

// ---------------------------------------------------------------------------
// Provider
// ---------------------------------------------------------------------------

/// A configured backend plus its admission control.
pub struct Provider {
    config: ProviderConfig,
    backend: Arc<dyn ChatBackend>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    refusal_patterns: Vec<Regex>,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(config: ProviderConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, ConfigError> {
        Self::with_clock(config, backend, Arc::new(SystemClock))
    }

    pub fn with_clock(
        config: ProviderConfig,
        backend: Arc<dyn ChatBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let refusal_patterns = config
            .refusal_patterns
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|e| ConfigError::BadRefusalPattern(p.clone(), e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Provider {
            limiter: RateLimiter::per_minute(config.rate_limit),
            config,
            backend,
            clock,
            refusal_patterns,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.provider_id
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = Duration::from_millis(self.config.retry_backoff_ms);
        base.saturating_mul(1u32 << retry.min(16)).min(MAX_BACKOFF)
    }

    /// Runs one exchange in a brand-new session.
    ///
    /// Transient failures are retried up to `max_retries` times with
    /// exponential backoff; every attempt passes through the rate limiter.
    pub fn complete_disposable(
        &self,
        prompt_text: &str,
        prompt_id: &str,
        trial_index: u32,
    ) -> Result<SessionRecord, SessionError> {
        if prompt_text.is_empty() {
            return Err(SessionError::EmptyPrompt);
        }
        let started_at = Utc::now();
        let mut attempts = 0;
        let result = loop {
            self.limiter.acquire(self.clock.as_ref());
            attempts += 1;
            // a new request object per attempt: nothing survives between sessions
            let request = ChatRequest::single_turn(
                &self.config.model_name,
                self.config.system_prompt.as_deref(),
                prompt_text,
                &self.config.sampling,
                prompt_id,
                trial_index,
            );
            match self.backend.send(&request) {
                Err(BackendError::Transient(_)) if attempts <= self.config.max_retries => {
                    self.clock.sleep(self.backoff(attempts - 1));
                }
                other => break other,
            }
        };
        let mut record = SessionRecord {
            record_id: uuid::Uuid::new_v4().to_string(),
            provider_id: self.config.provider_id.clone(),
            model_name: self.config.model_name.clone(),
            prompt_id: prompt_id.to_string(),
            trial_index,
            request_text: prompt_text.to_string(),
            response_text: String::new(),
            sampling: self.config.sampling.clone(),
            started_at,
            finished_at: Utc::now(),
            outcome: Outcome::Ok,
            attempts,
            error: None,
        };
        match result {
            Ok(reply) => {
                let refused = self
                    .refusal_patterns
                    .iter()
                    .any(|re| re.is_match(&reply.text));
                record.response_text = reply.text;
                if refused {
                    record.outcome = Outcome::Refusal;
                    record.error = Some("response matched a refusal pattern".into());
                    return Err(SessionError::RefusalDetected(Box::new(record)));
                }
                Ok(record)
            }
            Err(BackendError::Blocked(msg)) => {
                record.outcome = Outcome::Refusal;
                record.error = Some(msg);
                Err(SessionError::RefusalDetected(Box::new(record)))
            }
            Err(BackendError::Transient(msg) | BackendError::Fatal(msg)) => {
                record.outcome = Outcome::TransportError;
                record.error = Some(msg);
                Err(SessionError::TransportExhausted(Box::new(record)))
            }
        }
    }
}

/// Builds the backend a configuration (or an explicit selector) points at.
///
/// Relative replay directories in `config` resolve against `base_dir`; a
/// selector's directory is used as given. `live:<id>` needs an http(s)
/// `base_url` and reads the API key for `<id>`.
pub fn build_backend(
    config: &ProviderConfig,
    selector: Option<&BackendSelector>,
    base_dir: &Path,
) -> Result<Arc<dyn ChatBackend>, BuildError> {
    let live_key_id = match selector {
        Some(BackendSelector::Replay(dir)) => return Ok(Arc::new(load_replay_fixtures(dir)?)),
        Some(BackendSelector::Live(id)) => id.as_str(),
        None => match config.replay_dir() {
            Some(dir) => return Ok(Arc::new(load_replay_fixtures(&base_dir.join(dir))?)),
            None => config.provider_id.as_str(),
        },
    };
    config.validate()?;
    if !(config.base_url.starts_with("http://") || config.base_url.starts_with("https://")) {
        return Err(
            ConfigError::NotHttp(config.provider_id.clone(), config.base_url.clone()).into(),
        );
    }
    let api_key = std::env::var(api_key_env_var(live_key_id)).ok();
    Ok(Arc::new(HttpBackend::new(&config.base_url, api_key)))
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

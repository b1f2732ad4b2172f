//! Chat-completion backends: HTTP, deterministic mock, batching and caching.

mod cache;
mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::Prompt;

pub use cache::{CachedBackend, CompletionCache};
pub use http::{HttpBackend, HttpResponse, RateLimiter, Transport, TransportError, UreqTransport};
pub use mock::{MockBackend, MockFallback};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Seconds.
    pub request_timeout: f64,
    pub max_retries: u32,
    /// Seconds; attempt `n` waits up to `backoff_base · 2^n`.
    pub backoff_base: f64,
    pub max_backoff: f64,
    /// Name of the environment variable holding the key.
    pub api_key_env: String,
    /// Requests per second; unlimited when absent.
    pub rate_limit: Option<f64>,
    /// Whether the server continues a trailing assistant message.
    pub assistant_prefix: bool,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            request_timeout: 60.0,
            max_retries: 3,
            backoff_base: 1.0,
            max_backoff: 30.0,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            rate_limit: None,
            assistant_prefix: false,
            api_key: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidConfig(m.to_string()));
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if !(self.request_timeout > 0.0) {
            return bad("request_timeout must be > 0");
        }
        if !(self.backoff_base >= 0.0) || !(self.max_backoff >= 0.0) {
            return bad("backoff values must be >= 0");
        }
        if self.rate_limit.is_some_and(|r| !(r > 0.0)) {
            return bad("rate_limit must be > 0");
        }
        if self.model_name.is_empty() {
            return bad("model_name is empty");
        }
        Ok(())
    }

    /// Fills `api_key` from the configured environment variable.
    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("authentication failed (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("prompt exceeds the model context window")]
    ContextOverflow,
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no fixture for prompt {digest}")]
    FixtureMiss { digest: String },
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: Prompt,
    /// Text the assistant turn must start with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_prefix: Option<String>,
}

impl CompletionRequest {
    pub fn new(prompt: Prompt) -> Self {
        Self { prompt, assistant_prefix: None }
    }

    pub fn with_prefix(prompt: Prompt, prefix: impl Into<String>) -> Self {
        Self { prompt, assistant_prefix: Some(prefix.into()) }
    }
}

/// Successful backend reply. With an assistant prefix on a backend that
/// continues it, `text` holds only the continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(skip)]
    pub latency: Duration,
    pub attempt_count: u32,
    pub error: Option<String>,
}

impl CompletionResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

pub trait ChatBackend: Send + Sync {
    fn model_name(&self) -> &str;

    /// True when a trailing assistant message is sent on the wire and continued.
    fn supports_assistant_prefix(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError>;
}

/// Puts `prefix` in front of `raw` unless the output already starts with it.
pub fn apply_prefix(raw: &str, prefix: &str) -> String {
    if raw.starts_with(prefix) {
        raw.to_string()
    } else {
        format!("{prefix}{raw}")
    }
}

/// Runs one request and folds errors and the prefix into the result.
pub fn complete(backend: &dyn ChatBackend, request: &CompletionRequest) -> CompletionResult {
    let started = Instant::now();
    match backend.complete(request) {
        Ok(c) => CompletionResult {
            text: match &request.assistant_prefix {
                Some(prefix) => apply_prefix(&c.text, prefix),
                None => c.text,
            },
            finish_reason: c.finish_reason,
            latency: started.elapsed(),
            attempt_count: c.attempts.max(1),
            error: None,
        },
        Err(e) => CompletionResult {
            text: String::new(),
            finish_reason: FinishReason::Error,
            latency: started.elapsed(),
            attempt_count: match &e {
                LlmError::Exhausted { attempts, .. } => *attempts,
                _ => 1,
            },
            error: Some(e.to_string()),
        },
    }
}

/// At most `parallelism` requests in flight; results come back in input order.
pub fn complete_batch(backend: &dyn ChatBackend, requests: &[CompletionRequest], parallelism: usize) -> Vec<CompletionResult> {
    let workers = parallelism.max(1).min(requests.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CompletionResult>>> = Mutex::new(vec![None; requests.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(request) = requests.get(i) else { break };
                let result = complete(backend, request);
                slots.lock().expect("no panics while held")[i] = Some(result);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every slot filled")).collect()
}

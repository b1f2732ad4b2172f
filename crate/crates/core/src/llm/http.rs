use std::fs::File;
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{BackendConfig, ChatBackend, Completion, CompletionRequest, FinishReason, LlmError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

/// One POST of a JSON body. Implementations must not treat HTTP error
/// statuses as transport errors.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpResponse, TransportError> {
        let mut request = self.agent.post(url);
        for (k, v) in headers {
            request = request.header(k.as_str(), v.as_str());
        }
        let mut response = request.send(body).map_err(|e| TransportError(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Token bucket shared by all in-flight requests of a backend.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let capacity = per_second.max(1.0);
        Self { rate: per_second, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("limiter lock");
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                (1.0 - *tokens) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

pub struct HttpBackend {
    config: BackendConfig,
    transport: Box<dyn Transport>,
    limiter: Option<RateLimiter>,
    transcript: Option<Mutex<File>>,
    sleep: Sleeper,
}

enum Attempt {
    Done(Result<Completion, LlmError>),
    Retry(String),
}

fn is_context_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    ["context_length_exceeded", "maximum context length", "context length", "too many tokens"]
        .iter()
        .any(|needle| lower.contains(needle))
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        let timeout = Duration::from_secs_f64(config.request_timeout.max(0.001));
        Self::with_transport(config, Box::new(UreqTransport::new(timeout)))
    }

    pub fn with_transport(config: BackendConfig, transport: Box<dyn Transport>) -> Result<Self, LlmError> {
        config.validate()?;
        let limiter = config.rate_limit.map(RateLimiter::new);
        Ok(Self { config, transport, limiter, transcript: None, sleep: Box::new(std::thread::sleep) })
    }

    /// Appends one JSON line per request to `path`.
    pub fn with_transcript(mut self, path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.transcript = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut messages: Vec<Value> = request
            .prompt
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.text}))
            .collect();
        if let (true, Some(prefix)) = (self.config.assistant_prefix, &request.assistant_prefix) {
            messages.push(json!({"role": "assistant", "content": prefix}));
        }
        json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ceiling = (self.config.backoff_base * 2f64.powi(attempt as i32)).min(self.config.max_backoff);
        if ceiling <= 0.0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(rand::rng().random_range(0.0..=ceiling))
    }

    fn attempt(&self, body: &str) -> Attempt {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.config.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let response = match self.transport.post(&url, &headers, body) {
            Ok(r) => r,
            Err(TransportError(e)) => return Attempt::Retry(e),
        };
        match response.status {
            200..=299 => Attempt::Done(parse_response(&response.body)),
            401 | 403 => Attempt::Done(Err(LlmError::AuthFailure { status: response.status })),
            413 => Attempt::Done(Err(LlmError::ContextOverflow)),
            400 if is_context_overflow(&response.body) => Attempt::Done(Err(LlmError::ContextOverflow)),
            408 | 409 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {}", response.status)),
            status => Attempt::Done(Err(LlmError::Rejected { status, body: response.body })),
        }
    }

    fn log(&self, request: &CompletionRequest, outcome: &Result<Completion, LlmError>) {
        let Some(file) = &self.transcript else { return };
        let line = json!({
            "model": self.config.model_name,
            "digest": request.prompt.digest(),
            "tag": request.prompt.tag,
            "messages": request.prompt.messages,
            "assistant_prefix": request.assistant_prefix,
            "text": outcome.as_ref().ok().map(|c| &c.text),
            "attempts": outcome.as_ref().ok().map(|c| c.attempts),
            "error": outcome.as_ref().err().map(|e| e.to_string()),
        });
        let mut file = file.lock().expect("transcript lock");
        if let Err(e) = writeln!(file, "{line}") {
            log::warn!("transcript write failed: {e}");
        }
    }
}

pub(crate) fn parse_response(body: &str) -> Result<Completion, LlmError> {
    let value: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedResponse("no message content".into()))?;
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    Ok(Completion { text: text.to_string(), finish_reason, attempts: 1 })
}

impl ChatBackend for HttpBackend {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn supports_assistant_prefix(&self) -> bool {
        self.config.assistant_prefix
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let body = self.request_body(request).to_string();
        let mut last = String::new();
        let mut outcome = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                (self.sleep)(self.backoff(attempt - 1));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.attempt(&body) {
                Attempt::Done(result) => {
                    outcome = Some(result.map(|c| Completion { attempts: attempt + 1, ..c }));
                    break;
                }
                Attempt::Retry(reason) => {
                    log::debug!("attempt {} failed: {reason}", attempt + 1);
                    last = reason;
                }
            }
        }
        let outcome =
            outcome.unwrap_or(Err(LlmError::Exhausted { attempts: self.config.max_retries + 1, last }));
        self.log(request, &outcome);
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::complete;
    use crate::prompting::{build_context_prompt, Prompt};
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"你好#1世界"},"finish_reason":"stop"}]}"#;

    struct Scripted {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        calls: Arc<AtomicUsize>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpResponse, TransportError>>) -> (Self, Arc<AtomicUsize>) {
            let calls = Arc::new(AtomicUsize::new(0));
            let mut replies = replies;
            replies.reverse();
            (Self { replies: Mutex::new(replies), calls: calls.clone() }, calls)
        }
    }

    impl Transport for Scripted {
        fn post(&self, _: &str, _: &[(String, String)], _: &str) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().pop().unwrap_or(Err(TransportError("script exhausted".into())))
        }
    }

    fn status(code: u16, body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: code, body: body.into() })
    }

    fn backend(replies: Vec<Result<HttpResponse, TransportError>>, max_retries: u32) -> (HttpBackend, Arc<AtomicUsize>) {
        let (t, calls) = Scripted::new(replies);
        let config = BackendConfig { max_retries, backoff_base: 0.001, ..Default::default() };
        (HttpBackend::with_transport(config, Box::new(t)).unwrap().with_sleeper(|_| {}), calls)
    }

    fn prompt() -> CompletionRequest {
        CompletionRequest::new(build_context_prompt("你好").unwrap())
    }

    #[test]
    fn retries_rate_limits() {
        let (b, calls) = backend(vec![status(429, ""), status(429, ""), status(200, OK_BODY)], 3);
        let r = complete(&b, &prompt());
        assert_eq!(r.text, "你好#1世界");
        assert_eq!(r.attempt_count, 3);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (b, calls) = backend(vec![status(401, "bad key"), status(200, OK_BODY)], 5);
        assert_eq!(b.complete(&prompt()), Err(LlmError::AuthFailure { status: 401 }));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn context_overflow_is_not_retried() {
        let body = r#"{"error":{"code":"context_length_exceeded"}}"#;
        let (b, calls) = backend(vec![status(400, body), status(200, OK_BODY)], 5);
        assert_eq!(b.complete(&prompt()), Err(LlmError::ContextOverflow));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn exhaustion() {
        let (b, calls) = backend(vec![Err(TransportError("refused".into())); 3], 2);
        assert_eq!(b.complete(&prompt()), Err(LlmError::Exhausted { attempts: 3, last: "refused".into() }));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        let (b, _) = backend(vec![Err(TransportError("refused".into()))], 0);
        let r = complete(&b, &prompt());
        assert_eq!((r.finish_reason, r.attempt_count), (FinishReason::Error, 1));
    }

    #[test]
    fn backoff_is_bounded_full_jitter() {
        let config = BackendConfig { backoff_base: 0.5, max_backoff: 3.0, ..Default::default() };
        let (t, _) = Scripted::new(vec![]);
        let b = HttpBackend::with_transport(config, Box::new(t)).unwrap();
        for attempt in 0..6 {
            let cap = (0.5 * 2f64.powi(attempt)).min(3.0);
            for _ in 0..50 {
                assert!(b.backoff(attempt as u32).as_secs_f64() <= cap + 1e-9);
            }
        }
    }

    #[test]
    fn request_body_shape() {
        let (mut b, _) = backend(vec![], 0);
        let req = CompletionRequest::with_prefix(build_context_prompt("你好").unwrap(), "RESP");
        let body = b.request_body(&req);
        assert_eq!(body["messages"].as_array().unwrap().len(), 2);
        assert_eq!(body["messages"][1]["content"], "A:\nB: \"你好\"");
        assert_eq!(body["temperature"], 0.0);
        b.config.assistant_prefix = true;
        let body = b.request_body(&req);
        assert_eq!(body["messages"][2], json!({"role": "assistant", "content": "RESP"}));
    }

    #[test]
    fn length_finish_reason_and_malformed_body() {
        let c = parse_response(r#"{"choices":[{"message":{"content":"x"},"finish_reason":"length"}]}"#).unwrap();
        assert_eq!(c.finish_reason, FinishReason::Length);
        assert!(matches!(parse_response("{}"), Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(100.0);
        let started = Instant::now();
        for _ in 0..150 {
            limiter.acquire();
        }
        // 100 burst tokens, then 50 more at 100/s
        assert!(started.elapsed() >= Duration::from_millis(400));
    }

    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (code, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                reader.get_mut().write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn wire_round_trip() {
        let (url, server) = serve(vec![(429, "{}".into()), (200, OK_BODY.into())]);
        let config = BackendConfig {
            base_url: url,
            model_name: "local-model".into(),
            backoff_base: 0.0,
            api_key: Some("k".into()),
            request_timeout: 5.0,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let transcript = dir.path().join("t.jsonl");
        let b = HttpBackend::new(config).unwrap().with_transcript(&transcript).unwrap();
        let prompt: Prompt = build_context_prompt("你好").unwrap().with_tag("000001");
        let r = complete(&b, &CompletionRequest::new(prompt));
        assert_eq!(r.text, "你好#1世界");
        assert_eq!(r.attempt_count, 2);
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["model"], "local-model");
        assert_eq!(sent["messages"][0]["role"], "system");
        let log = std::fs::read_to_string(&transcript).unwrap();
        assert_eq!(log.lines().count(), 1);
        assert!(log.contains("\"tag\":\"000001\""));
        assert!(!log.contains("Bearer"));
    }
}

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use super::{ChatBackend, Completion, CompletionRequest, FinishReason, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFallback {
    /// Answer with the ground truth registered for the prompt's tag.
    EchoGroundTruth,
    Fail,
}

/// Deterministic backend answering from fixtures keyed by prompt digest.
#[derive(Debug)]
pub struct MockBackend {
    model: String,
    fixtures: HashMap<String, String>,
    ground_truth: HashMap<String, String>,
    fallback: MockFallback,
    latency: Duration,
    prefix_support: bool,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(model: impl Into<String>, fixtures: HashMap<String, String>, fallback: MockFallback) -> Self {
        Self {
            model: model.into(),
            fixtures,
            ground_truth: HashMap::new(),
            fallback,
            latency: Duration::ZERO,
            prefix_support: true,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    /// Ground-truth outputs keyed by sample id (the prompt tag).
    pub fn with_ground_truth(mut self, ground_truth: HashMap<String, String>) -> Self {
        self.ground_truth = ground_truth;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_prefix_support(mut self, on: bool) -> Self {
        self.prefix_support = on;
        self
    }

    pub fn add_fixture(&mut self, digest: impl Into<String>, text: impl Into<String>) {
        self.fixtures.insert(digest.into(), text.into());
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of concurrent `complete` calls observed.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn lookup(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let digest = request.prompt.digest();
        if let Some(text) = self.fixtures.get(&digest) {
            return Ok(text.clone());
        }
        match self.fallback {
            MockFallback::EchoGroundTruth => request
                .prompt
                .tag
                .as_ref()
                .and_then(|tag| self.ground_truth.get(tag))
                .cloned()
                .ok_or(LlmError::FixtureMiss { digest }),
            MockFallback::Fail => Err(LlmError::FixtureMiss { digest }),
        }
    }
}

impl ChatBackend for MockBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn supports_assistant_prefix(&self) -> bool {
        self.prefix_support
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let result = self.lookup(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        let mut text = result?;
        // a continuing server returns only what follows the prefix
        if let (true, Some(prefix)) = (self.prefix_support, &request.assistant_prefix) {
            if let Some(rest) = text.strip_prefix(prefix.as_str()) {
                text = rest.to_string();
            }
        }
        Ok(Completion { text, finish_reason: FinishReason::Stop, attempts: 1 })
    }
}

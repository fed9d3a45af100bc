//! Generation backends behind one contract: a deterministic mock or an
//! OpenAI-compatible chat-completions endpoint.

mod http;
mod mock;

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::ocr::ImageRef;
use crate::util::{sha256_hex, Semaphore};

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{GoldEntry, MockBackend, MockMode, MockPolicy};

pub const LINK_MAX_NEW_TOKENS: u32 = 32;
pub const QA_MAX_NEW_TOKENS: u32 = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub image: Option<ImageRef>,
    pub prompt_text: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
    /// Correlation id, e.g. the dataset question id. Logged, and used by the
    /// gold-answer mock; never sent to real backends.
    pub request_id: Option<String>,
}

impl GenerationRequest {
    /// Greedy request with no stop sequences.
    pub fn new(prompt_text: impl Into<String>, max_new_tokens: u32) -> Self {
        GenerationRequest {
            image: None,
            prompt_text: prompt_text.into(),
            max_new_tokens,
            temperature: 0.0,
            stop_sequences: Vec::new(),
            request_id: None,
        }
    }

    pub fn with_image(mut self, image: ImageRef) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_request_id(mut self, id: impl Into<String>) -> Self {
        self.request_id = Some(id.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_text.trim().is_empty() {
            return Err(Error::invalid("prompt text is empty"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("max_new_tokens must be positive"));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::invalid("temperature must be a finite non-negative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub text: String,
    pub latency_ms: u64,
    pub backend_tag: String,
}

/// Why a single backend call failed.
#[derive(Debug)]
pub enum BackendFailure {
    /// Worth retrying: connection trouble, timeouts, 429 and 5xx.
    Transient(String),
    Fatal(Error),
}

pub trait LmmBackend: Send + Sync {
    fn tag(&self) -> &str;
    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, BackendFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..RetryPolicy::default()
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Bounded-concurrency, retrying front door to a backend.
pub struct LmmGateway {
    backend: Box<dyn LmmBackend>,
    retry: RetryPolicy,
    inflight: Semaphore,
}

impl LmmGateway {
    pub fn new(backend: Box<dyn LmmBackend>, retry: RetryPolicy, max_inflight: usize) -> Self {
        LmmGateway {
            backend,
            retry,
            inflight: Semaphore::new(max_inflight),
        }
    }

    /// Mock backend without retries, default concurrency.
    pub fn mock(policy: MockPolicy) -> Self {
        LmmGateway::new(Box::new(MockBackend::new(policy)), RetryPolicy::none(), 4)
    }

    pub fn backend_tag(&self) -> &str {
        self.backend.tag()
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult> {
        request.validate()?;
        let _permit = self.inflight.acquire();
        let started = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.backend.complete(request) {
                Ok(text) => {
                    return Ok(GenerationResult {
                        text: truncate_at_stop(&text, &request.stop_sequences).to_string(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend_tag: self.backend.tag().to_string(),
                    })
                }
                Err(BackendFailure::Fatal(e)) => return Err(e),
                Err(BackendFailure::Transient(message)) => {
                    if attempts > self.retry.max_retries {
                        return Err(Error::Transport { attempts, message });
                    }
                    tracing::warn!(
                        backend = self.backend.tag(),
                        request = request.request_id.as_deref().unwrap_or("-"),
                        attempt = attempts,
                        error = %message,
                        "generation failed, retrying"
                    );
                    std::thread::sleep(self.retry.delay(attempts));
                }
            }
        }
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(i) => &text[..i],
        None => text,
    }
}

/// Short stable key for a prompt, used by scripted mocks.
pub fn prompt_fingerprint(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())[..16].to_string()
}

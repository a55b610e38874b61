//! Text-completion backends behind one client.
//!
//! [`LlmClient`] validates prompts, caps in-flight calls, retries transient
//! failures and appends every call (failed ones included) to a [`CallLedger`].
//! Backends: an OpenAI-compatible HTTP client, a fixture-keyed mock, a strict
//! replay of a recorded ledger, and [`FnBackend`] for scripted completions.

mod fixture;
mod http;
mod ledger;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use fixture::{load_fixture, save_fixture, FixtureEntry, MockBackend, ReplayBackend};
pub use http::HttpBackend;
pub use ledger::{CallLedger, LedgerRecord};

pub const DEFAULT_SYSTEM_PROMPT: &str =
    "You are an expert in SQLite and text-to-SQL. Continue the text exactly where it stops.";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("prompt of {len} chars exceeds the {max}-char context")]
    ContextOverflow { len: usize, max: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no mock completion for prompt {prompt_sha256}")]
    MockMiss { prompt_sha256: String },
    #[error("replay drift: {0}")]
    ReplayDrift(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("fixture io error: {0}")]
    Io(String),
}

impl LlmError {
    /// Whether the retry policy applies: 429, 5xx and timeouts.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout => true,
            LlmError::HttpStatus { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub model: String,
    pub endpoint: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
    /// Prompts longer than this many characters are refused before any call.
    pub max_context_chars: usize,
    pub max_in_flight: usize,
    pub system_prompt: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            backend: BackendKind::Mock,
            model: "llama-3-70b-instruct".into(),
            endpoint: None,
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 120.0,
            retry: RetryPolicy::default(),
            max_context_chars: 32_000,
            max_in_flight: 4,
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be >= 1".into());
        }
        if self.retry.attempts == 0 {
            return Err("retry.attempts must be >= 1".into());
        }
        Ok(())
    }
}

/// Something that turns a prompt into a completion.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Scripted backend around a closure.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str) -> Result<String, LlmError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnBackend { name: name.into(), f }
    }
}

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, LlmError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (self.f)(prompt)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct LlmClient {
    backend: Box<dyn LlmBackend>,
    config: LlmConfig,
    ledger: Mutex<CallLedger>,
    in_flight: Semaphore,
}

impl LlmClient {
    pub fn new(config: LlmConfig, backend: Box<dyn LlmBackend>) -> Self {
        let in_flight = Semaphore::new(config.max_in_flight.max(1));
        LlmClient {
            backend,
            config,
            ledger: Mutex::new(CallLedger::default()),
            in_flight,
        }
    }

    /// Builds the backend named by `config.backend`. Mock and replay
    /// backends read `fixture`.
    pub fn from_config(
        config: LlmConfig,
        fixture: Option<&std::path::Path>,
        api_key: Option<String>,
    ) -> Result<Self, LlmError> {
        let backend: Box<dyn LlmBackend> = match config.backend {
            BackendKind::Http => Box::new(HttpBackend::new(&config, api_key)?),
            BackendKind::Mock => {
                let path = fixture.ok_or_else(|| LlmError::Io("mock backend needs a fixture file".into()))?;
                Box::new(MockBackend::from_file(path)?)
            }
            BackendKind::Replay => {
                let path = fixture.ok_or_else(|| LlmError::Io("replay backend needs a fixture file".into()))?;
                Box::new(ReplayBackend::from_file(path)?)
            }
        };
        Ok(Self::new(config, backend))
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let start = Instant::now();
        let result = self.complete_inner(prompt);
        self.ledger
            .lock()
            .unwrap()
            .push(LedgerRecord::new(prompt, &result, start.elapsed(), self.backend.name()));
        result
    }

    fn complete_inner(&self, prompt: &str) -> Result<String, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let len = prompt.chars().count();
        if len > self.config.max_context_chars {
            return Err(LlmError::ContextOverflow {
                len,
                max: self.config.max_context_chars,
            });
        }
        let _permit = self.in_flight.acquire();
        let attempts = self.config.retry.attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.retry.initial_backoff_ms);
        let mut attempt = 1;
        loop {
            match self.backend.complete(prompt) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt < attempts => {
                    log::warn!("llm attempt {attempt}/{attempts} failed: {e}; retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// A copy of the ledger so far.
    pub fn ledger(&self) -> CallLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub fn take_ledger(&self) -> CallLedger {
        std::mem::take(&mut *self.ledger.lock().unwrap())
    }
}

pub fn sha256_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}

//! The generative policy as a sampling backend.
//!
//! A [`PolicyBackend`] turns a problem plus a prefix of reasoning steps into
//! `n` sampled continuations. [`PolicyClient`] wraps a backend with retries
//! and usage accounting, and is what the rest of the engine talks to.

mod mock;
mod remote;
mod solution;
mod verify;

pub use mock::{MockPolicy, MockScript, PlantedSchedule, TableEntry};
pub use remote::{RemoteConfig, RemotePolicy};
pub use solution::{parse_solution, render_steps, ParseError, Solution};
pub use verify::{verify_answer, NUMERIC_RTOL};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::BufRead;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    MultipleChoice,
    FillInBlank,
}

/// An image attachment. Never decoded locally, only forwarded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Uri { uri: String },
    Inline { b64: String, media_type: String },
}

impl ImageRef {
    /// URL form used by chat-completion image parts.
    pub fn as_url(&self) -> String {
        match self {
            ImageRef::Uri { uri } => uri.clone(),
            ImageRef::Inline { b64, media_type } => format!("data:{media_type};base64,{b64}"),
        }
    }
}

/// One seed question with a verifiable answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    pub gold_answer: String,
    pub kind: AnswerKind,
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("duplicate problem id {id:?} on line {line}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Problem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty problem id".into());
        }
        if self.gold_answer.trim().is_empty() {
            return Err(format!("problem {}: empty gold answer", self.id));
        }
        Ok(())
    }

    pub fn is_correct(&self, predicted: &str) -> bool {
        verify_answer(predicted, &self.gold_answer, self.kind)
    }
}

/// Reads problems from JSONL, one per line. Blank lines are skipped.
pub fn load_problems(reader: impl BufRead) -> Result<Vec<Problem>, ProblemError> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem = serde_json::from_str(&line).map_err(|e| ProblemError::Invalid {
            line: lineno,
            message: e.to_string(),
        })?;
        problem
            .validate()
            .map_err(|message| ProblemError::Invalid { line: lineno, message })?;
        if !seen.insert(problem.id.clone()) {
            return Err(ProblemError::DuplicateId {
                line: lineno,
                id: problem.id,
            });
        }
        problems.push(problem);
    }
    Ok(problems)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 50,
            top_p: 0.9,
            max_tokens: 1024,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(PolicyError::Precondition("temperature must be >= 0".into()));
        }
        if self.top_k == 0 {
            return Err(PolicyError::Precondition("top_k must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(PolicyError::Precondition("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(PolicyError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// What to continue: a problem, the steps already taken, and the index of
/// the first draw in this batch (for draw-keyed deterministic backends).
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub problem: &'a Problem,
    pub prefix: &'a [String],
    pub first_draw: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("backend refused: {0}")]
    Refused(String),
    #[error("empty completion")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request rejected: {0}")]
    Request(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl PolicyError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, PolicyError::Transport(_))
    }
}

/// Raw output of one backend call.
#[derive(Debug, Clone, Default)]
pub struct BackendBatch {
    pub samples: Vec<Result<String, SampleError>>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait PolicyBackend: Send + Sync {
    /// Samples `n` continuations. The returned batch must hold exactly `n`
    /// entries; per-sample failures are reported in place.
    fn generate(
        &self,
        request: &CompletionRequest<'_>,
        params: &SamplingParams,
        n: usize,
    ) -> Result<BackendBatch, PolicyError>;
}

/// Shared call and token counters.
#[derive(Debug, Default)]
pub struct UsageLedger {
    calls: AtomicU64,
    samples: AtomicU64,
    failed_samples: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub calls: u64,
    pub samples: u64,
    pub failed_samples: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageLedger {
    fn record(&self, batch: &BackendBatch) {
        let failed = batch.samples.iter().filter(|s| s.is_err()).count() as u64;
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.samples.fetch_add(batch.samples.len() as u64, Ordering::Relaxed);
        self.failed_samples.fetch_add(failed, Ordering::Relaxed);
        self.prompt_tokens.fetch_add(batch.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(batch.completion_tokens, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            samples: self.samples.load(Ordering::Relaxed),
            failed_samples: self.failed_samples.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Backend handle used by the estimator: validates, retries, and accounts.
#[derive(Clone)]
pub struct PolicyClient {
    backend: Arc<dyn PolicyBackend>,
    ledger: Arc<UsageLedger>,
    retry: RetryPolicy,
}

impl PolicyClient {
    pub fn new(backend: Arc<dyn PolicyBackend>) -> Self {
        Self {
            backend,
            ledger: Arc::new(UsageLedger::default()),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    /// Samples exactly `n` continuation texts (prefix not echoed).
    pub fn complete(
        &self,
        request: &CompletionRequest<'_>,
        params: &SamplingParams,
        n: usize,
    ) -> Result<Vec<Result<String, SampleError>>, PolicyError> {
        if n == 0 {
            return Err(PolicyError::Precondition("n must be at least 1".into()));
        }
        params.validate()?;
        let mut attempt = 0;
        loop {
            match self.backend.generate(request, params, n) {
                Ok(mut batch) => {
                    if batch.samples.len() != n {
                        return Err(PolicyError::Protocol(format!(
                            "backend returned {} samples, expected {n}",
                            batch.samples.len()
                        )));
                    }
                    for sample in &mut batch.samples {
                        if matches!(sample, Ok(text) if text.trim().is_empty()) {
                            *sample = Err(SampleError::Empty);
                        }
                    }
                    self.ledger.record(&batch);
                    return Ok(batch.samples);
                }
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

//! Step scoring: two-logit step probability, soft-label cross-entropy, and
//! the scorer interface used for reranking.

use crate::dataset::interleave_markers;
use crate::http::{join_url, post_json};
use crate::policy::{Problem, Solution};
use crate::seed::{digest_steps, stream_rng, Label};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashMap;
use std::time::Duration;
use thiserror::Error;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before any log or odds.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl ScoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::Transport(_))
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Per-step correctness probabilities, clamped at construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepScoreVector(Vec<f64>);

impl StepScoreVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, ScoreError> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ScoreError::Invalid(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self(probs.into_iter().map(clamp_prob).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `exp(z_yes) / (exp(z_yes) + exp(z_no))`, evaluated after subtracting the max logit.
pub fn step_probability(z_yes: f64, z_no: f64) -> Result<f64, ScoreError> {
    if !z_yes.is_finite() || !z_no.is_finite() {
        return Err(ScoreError::Invalid("logits must be finite".into()));
    }
    let m = z_yes.max(z_no);
    let (yes, no) = ((z_yes - m).exp(), (z_no - m).exp());
    Ok(yes / (yes + no))
}

/// Summed binary cross-entropy between predicted step probabilities and soft labels.
pub fn prm_loss(preds: &[f64], targets: &[f64]) -> Result<f64, ScoreError> {
    if preds.len() != targets.len() {
        return Err(ScoreError::Invalid(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(ScoreError::Invalid("empty step list".into()));
    }
    let mut loss = 0.0;
    for (&p, &y) in preds.iter().zip(targets) {
        if !(0.0..=1.0).contains(&p) {
            return Err(ScoreError::Invalid(format!("prediction {p} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(ScoreError::Invalid(format!("target {y} outside [0, 1]")));
        }
        let p = clamp_prob(p);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(loss)
}

/// Anything that can score a candidate path step by step.
pub trait Scorer: Send + Sync {
    fn score(&self, problem: &Problem, solution: &Solution) -> Result<Vec<f64>, ScoreError>;
}

/// Scores a path and checks that exactly one probability came back per step.
pub fn score_path(problem: &Problem, solution: &Solution, scorer: &dyn Scorer) -> Result<StepScoreVector, ScoreError> {
    let probs = scorer.score(problem, solution)?;
    if probs.len() != solution.steps.len() {
        return Err(ScoreError::Protocol(format!(
            "scorer returned {} probabilities for {} steps",
            probs.len(),
            solution.steps.len()
        )));
    }
    StepScoreVector::new(probs)
}

/// Scores `1 - eps` before the first planted error and `eps` from it onward.
///
/// Paths without a registered plant fall back to the final answer: a correct
/// answer scores high throughout, a wrong one has its error at the last step.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    planted: HashMap<(String, String), Option<usize>>,
}

impl OracleScorer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the 1-based first erroneous step of a path (`None` = correct).
    pub fn plant(&mut self, problem_id: &str, solution: &Solution, first_error: Option<usize>) {
        self.planted
            .insert((problem_id.to_string(), solution_key(solution)), first_error);
    }
}

fn solution_key(solution: &Solution) -> String {
    let mut parts = solution.steps.clone();
    parts.push(solution.final_answer.clone());
    digest_steps(&parts)
}

impl Scorer for OracleScorer {
    fn score(&self, problem: &Problem, solution: &Solution) -> Result<Vec<f64>, ScoreError> {
        let first_error = match self.planted.get(&(problem.id.clone(), solution_key(solution))) {
            Some(&planted) => planted,
            None if problem.is_correct(&solution.final_answer) => None,
            None => Some(solution.steps.len()),
        };
        Ok((1..=solution.steps.len())
            .map(|i| match first_error {
                Some(e) if i >= e => PROB_EPS,
                _ => 1.0 - PROB_EPS,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, _: &Problem, solution: &Solution) -> Result<Vec<f64>, ScoreError> {
        Ok(vec![self.0; solution.steps.len()])
    }
}

/// Uniform step scores keyed by (seed, problem, path).
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, problem: &Problem, solution: &Solution) -> Result<Vec<f64>, ScoreError> {
        let key = solution_key(solution);
        let mut rng = stream_rng(
            self.seed,
            &[Label::Str("scorer"), Label::Str(&problem.id), Label::Str(&key)],
        );
        Ok((0..solution.steps.len()).map(|_| rng.random::<f64>()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteScorerConfig {
    /// Full URL of the scoring endpoint, or a base URL to which `score` is appended.
    pub url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            api_key: None,
            timeout_secs: 60,
        }
    }
}

/// Posts `{question, images, steps}` and reads `{probs}`, one per `<prm>` marker.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    config: RemoteScorerConfig,
}

impl RemoteScorer {
    pub fn new(config: RemoteScorerConfig) -> Self {
        Self { config }
    }

    pub fn request_body(problem: &Problem, solution: &Solution) -> Result<serde_json::Value, ScoreError> {
        let marked = interleave_markers(problem, solution).map_err(|e| ScoreError::Invalid(e.to_string()))?;
        let steps: Vec<&str> = marked.segments.iter().map(|(s, _)| s.as_str()).collect();
        Ok(json!({
            "question": marked.question,
            "images": problem.images,
            "steps": steps,
        }))
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, problem: &Problem, solution: &Solution) -> Result<Vec<f64>, ScoreError> {
        let body = Self::request_body(problem, solution)?;
        let url = if self.config.url.ends_with("/score") {
            self.config.url.clone()
        } else {
            join_url(&self.config.url, "score")
        };
        let response = post_json(
            &url,
            self.config.api_key.as_deref(),
            &body,
            Duration::from_secs(self.config.timeout_secs),
        )
        .map_err(|e| {
            if e.is_transient() {
                ScoreError::Transport(e.to_string())
            } else {
                ScoreError::Protocol(e.to_string())
            }
        })?;
        response["probs"]
            .as_array()
            .ok_or_else(|| ScoreError::Protocol("response has no probs array".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| ScoreError::Protocol(format!("non-numeric probability {v}")))
            })
            .collect()
    }
}

//! Scripted policy for offline runs and tests.
//!
//! Every sample is a pure function of (seed, problem id, prefix, draw index),
//! so batches can be split across workers without changing the result.

use super::{
    render_steps, BackendBatch, CompletionRequest, PolicyBackend, PolicyError, Problem, SampleError, SamplingParams,
};
use crate::seed::{derive_seed, digest_steps, stream_rng, Label};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockScript {
    /// Emits the same text for every draw.
    Always { text: String },
    /// Pads the path to `steps` steps and answers correctly with probability `q`,
    /// independent of the prefix.
    Bernoulli { q: f64, steps: usize },
    /// A single reasoning path of `steps` steps with a fork at `error_step`:
    /// the good branch reaches the gold answer, the flawed branch never does.
    /// Prefixes that already contain the flawed step are hopeless; good
    /// prefixes shorter than `error_step` take the good branch with
    /// probability `p_good`.
    PlantedError {
        steps: usize,
        error_step: usize,
        p_good: f64,
        #[serde(default)]
        schedule: PlantedSchedule,
    },
    /// Lookup by problem id and prefix length; the first matching entry wins
    /// and draw `i` takes `completions[i % len]`. An empty completion string
    /// is reported as an empty sample.
    Table {
        entries: Vec<TableEntry>,
        #[serde(default)]
        fallback: Option<Box<MockScript>>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedSchedule {
    /// Independent seeded coin flips per draw.
    #[default]
    Random,
    /// Low-discrepancy sequence: any `k` consecutive draws contain
    /// `floor(k p)` or `ceil(k p)` good branches, with a seeded phase.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    #[serde(default)]
    pub problem_id: Option<String>,
    #[serde(default)]
    pub prefix_len: Option<usize>,
    pub completions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MockPolicy {
    script: MockScript,
    seed: u64,
}

impl MockPolicy {
    pub fn new(script: MockScript, seed: u64) -> Self {
        Self { script, seed }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn sample(
        &self,
        script: &MockScript,
        problem: &Problem,
        prefix: &[String],
        draw: u64,
    ) -> Result<String, SampleError> {
        let prefix_key = digest_steps(prefix);
        let labels = [
            Label::Str("mock"),
            Label::Str(&problem.id),
            Label::Str(&prefix_key),
            Label::Int(draw),
        ];
        match script {
            MockScript::Always { text } => Ok(text.clone()),
            MockScript::Bernoulli { q, steps } => {
                let correct = stream_rng(self.seed, &labels).random::<f64>() < *q;
                let new_steps: Vec<String> = (prefix.len() + 1..=*steps).map(good_step).collect();
                Ok(finish(&new_steps, problem, correct))
            }
            MockScript::PlantedError {
                steps,
                error_step,
                p_good,
                schedule,
            } => {
                let len = prefix.len();
                if prefix.iter().any(|s| is_flawed(s)) {
                    let rest: Vec<String> = (len + 1..=*steps).map(after_flaw_step).collect();
                    return Ok(finish(&rest, problem, false));
                }
                let good = len >= *error_step || {
                    match schedule {
                        PlantedSchedule::Random => stream_rng(self.seed, &labels).random::<f64>() < *p_good,
                        PlantedSchedule::Stratified => {
                            let phase_seed = derive_seed(self.seed, &labels[..3]);
                            let phase = (phase_seed >> 11) as f64 / (1u64 << 53) as f64;
                            let at = |i: u64| (i as f64 * p_good + phase).floor();
                            at(draw + 1) - at(draw) >= 1.0
                        }
                    }
                };
                let new_steps: Vec<String> = (len + 1..=*steps)
                    .map(|i| {
                        if good || i < *error_step {
                            good_step(i)
                        } else if i == *error_step {
                            flawed_step(i)
                        } else {
                            after_flaw_step(i)
                        }
                    })
                    .collect();
                Ok(finish(&new_steps, problem, good))
            }
            MockScript::Table { entries, fallback } => {
                let hit = entries.iter().find(|e| {
                    e.problem_id.as_ref().is_none_or(|id| id == &problem.id)
                        && e.prefix_len.is_none_or(|l| l == prefix.len())
                });
                match (hit, fallback) {
                    (Some(entry), _) if !entry.completions.is_empty() => {
                        let text = &entry.completions[(draw % entry.completions.len() as u64) as usize];
                        if text.is_empty() {
                            Err(SampleError::Empty)
                        } else {
                            Ok(text.clone())
                        }
                    }
                    (None, Some(inner)) => self.sample(inner, problem, prefix, draw),
                    _ => Err(SampleError::Refused(format!(
                        "no scripted completion for {} at prefix length {}",
                        problem.id,
                        prefix.len()
                    ))),
                }
            }
        }
    }
}

impl PolicyBackend for MockPolicy {
    fn generate(
        &self,
        request: &CompletionRequest<'_>,
        _params: &SamplingParams,
        n: usize,
    ) -> Result<BackendBatch, PolicyError> {
        let samples: Vec<_> = (0..n as u64)
            .map(|i| self.sample(&self.script, request.problem, request.prefix, request.first_draw + i))
            .collect();
        let prompt_words =
            word_count(&request.problem.question) + request.prefix.iter().map(|s| word_count(s)).sum::<u64>();
        let completion_tokens = samples
            .iter()
            .filter_map(|s| s.as_ref().ok())
            .map(|s| word_count(s))
            .sum();
        Ok(BackendBatch {
            samples,
            prompt_tokens: prompt_words * n as u64,
            completion_tokens,
        })
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

pub(crate) fn good_step(i: usize) -> String {
    format!("step {i}")
}

pub(crate) fn flawed_step(i: usize) -> String {
    format!("step {i} (flawed)")
}

fn after_flaw_step(i: usize) -> String {
    format!("step {i} (after flaw)")
}

fn is_flawed(step: &str) -> bool {
    step.ends_with("(flawed)") || step.ends_with("(after flaw)")
}

/// A wrong answer for `problem` under either answer kind.
pub(crate) fn wrong_answer(problem: &Problem) -> String {
    format!("not {}", problem.gold_answer)
}

fn finish(new_steps: &[String], problem: &Problem, correct: bool) -> String {
    let answer = if correct {
        problem.gold_answer.clone()
    } else {
        wrong_answer(problem)
    };
    format!("{}<answer>{answer}</answer>", render_steps(new_steps))
}

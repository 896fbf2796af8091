//! Monte Carlo estimation of prefix success probability.
//!
//! MC(prefix) is the fraction of sampled completions from `prefix` whose final
//! answer verifies against the gold answer. Unparseable completions count as
//! incorrect and are never resampled.

use crate::policy::{
    parse_solution, render_steps, CompletionRequest, PolicyClient, PolicyError, Problem, SamplingParams, Solution,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Rollouts drawn for a prefix the first time it is estimated.
pub const DEFAULT_ROLLOUTS_PER_PREFIX: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub prefix_len: usize,
    /// Full path (prefix plus continuation); `None` when the output did not parse.
    pub completion: Option<Solution>,
    pub correct: bool,
    pub draw_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub n_rollouts: usize,
    pub n_correct: usize,
    pub rollouts: Vec<RolloutRecord>,
}

impl McEstimate {
    /// Builds an estimate whose value is the exact ratio of the given rollouts.
    pub fn from_rollouts(rollouts: Vec<RolloutRecord>) -> Self {
        let n_rollouts = rollouts.len();
        let n_correct = rollouts.iter().filter(|r| r.correct).count();
        Self {
            value: ratio(n_correct, n_rollouts),
            n_rollouts,
            n_correct,
            rollouts,
        }
    }

    /// Pools two estimates of the same prefix.
    pub fn merge(mut self, other: McEstimate) -> Self {
        self.rollouts.extend(other.rollouts);
        Self::from_rollouts(self.rollouts)
    }

    pub fn incorrect(&self) -> impl Iterator<Item = &RolloutRecord> {
        self.rollouts.iter().filter(|r| !r.correct)
    }
}

pub(crate) fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum McError {
    #[error("rollout budget exhausted ({used}/{max} used)")]
    BudgetExhausted { used: u64, max: u64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Per-problem rollout cap with atomic debit.
#[derive(Debug)]
pub struct RolloutBudget {
    max: u64,
    used: AtomicU64,
}

impl RolloutBudget {
    pub fn new(max: u64) -> Self {
        Self {
            max,
            used: AtomicU64::new(0),
        }
    }

    pub fn max(&self) -> u64 {
        self.max
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::Acquire)
    }

    pub fn remaining(&self) -> u64 {
        self.max - self.used()
    }

    /// Debits up to `want` rollouts and returns how many were granted.
    pub fn reserve(&self, want: u64) -> Result<u64, McError> {
        let mut used = self.used.load(Ordering::Acquire);
        loop {
            let grant = want.min(self.max - used);
            if grant == 0 {
                return Err(McError::BudgetExhausted { used, max: self.max });
            }
            match self
                .used
                .compare_exchange_weak(used, used + grant, Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => return Ok(grant),
                Err(actual) => used = actual,
            }
        }
    }

    fn refund(&self, n: u64) {
        self.used.fetch_sub(n, Ordering::AcqRel);
    }
}

/// Draws and verifies rollouts through a policy client.
#[derive(Clone)]
pub struct McEstimator {
    client: PolicyClient,
    params: SamplingParams,
    workers: usize,
}

impl McEstimator {
    pub fn new(client: PolicyClient, params: SamplingParams) -> Self {
        Self {
            client,
            params,
            workers: 1,
        }
    }

    /// Splits each estimate's draws over up to `workers` concurrent calls.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn client(&self) -> &PolicyClient {
        &self.client
    }

    /// Estimates MC(prefix) from `min(k, remaining budget)` fresh rollouts,
    /// numbered from `first_draw`.
    pub fn estimate(
        &self,
        problem: &Problem,
        prefix: &[String],
        k: usize,
        budget: &RolloutBudget,
        first_draw: u64,
    ) -> Result<McEstimate, McError> {
        if k == 0 {
            return Err(McError::Precondition("k must be at least 1".into()));
        }
        let granted = budget.reserve(k as u64)? as usize;
        let chunks = chunk_sizes(granted, self.workers);
        let draw = |offset: usize, size: usize| {
            let request = CompletionRequest {
                problem,
                prefix,
                first_draw: first_draw + offset as u64,
            };
            self.client.complete(&request, &self.params, size)
        };
        let results: Vec<_> = if chunks.len() == 1 {
            vec![draw(0, granted)]
        } else {
            chunks.par_iter().map(|&(offset, size)| draw(offset, size)).collect()
        };

        let mut undrawn = 0;
        let mut first_error = None;
        let mut texts = Vec::with_capacity(granted);
        for (result, &(_, size)) in results.into_iter().zip(&chunks) {
            match result {
                Ok(batch) => texts.extend(batch),
                Err(e) => {
                    undrawn += size as u64;
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            budget.refund(undrawn);
            return Err(e.into());
        }

        let prefix_text = render_steps(prefix);
        let rollouts = texts
            .into_iter()
            .enumerate()
            .map(|(i, sample)| {
                let completion = sample
                    .ok()
                    .and_then(|text| parse_solution(&format!("{prefix_text}{text}")).ok());
                let correct = completion.as_ref().is_some_and(|s| problem.is_correct(&s.final_answer));
                RolloutRecord {
                    prefix_len: prefix.len(),
                    completion,
                    correct,
                    draw_index: first_draw + i as u64,
                }
            })
            .collect();
        Ok(McEstimate::from_rollouts(rollouts))
    }
}

/// Contiguous `(offset, size)` chunks covering `total` items.
fn chunk_sizes(total: usize, workers: usize) -> Vec<(usize, usize)> {
    let parts = workers.clamp(1, total.max(1));
    let (base, extra) = (total / parts, total % parts);
    let mut offset = 0;
    (0..parts)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let chunk = (offset, size);
            offset += size;
            chunk
        })
        .filter(|&(_, size)| size > 0)
        .collect()
}

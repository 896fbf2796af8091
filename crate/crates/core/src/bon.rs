//! Best-of-N selection over step-scored candidate paths.

use crate::policy::{Problem, Solution};
use crate::prm::{score_path, Scorer, StepScoreVector};
use crate::seed::{derive_seed, stream_rng, Label};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_CANDIDATES: usize = 16;
pub const SWEEP_CANDIDATES: [usize; 4] = [2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AggregationMethod {
    Min,
    Max,
    Average,
    SumLogPr,
    SumLogOdds,
    MeanOdds,
    /// Uniform seeded pick that ignores scores.
    Random,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 7] = [
        AggregationMethod::Random,
        AggregationMethod::Min,
        AggregationMethod::Average,
        AggregationMethod::Max,
        AggregationMethod::SumLogPr,
        AggregationMethod::SumLogOdds,
        AggregationMethod::MeanOdds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationMethod::Min => "Min",
            AggregationMethod::Max => "Max",
            AggregationMethod::Average => "Average",
            AggregationMethod::SumLogPr => "SumLogPr",
            AggregationMethod::SumLogOdds => "SumLogOdds",
            AggregationMethod::MeanOdds => "MeanOdds",
            AggregationMethod::Random => "Random",
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationMethod {
    type Err = String;

    /// Case-insensitive; `-` and `_` are ignored, so `mean-odds` and `MeanOdds` agree.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .flat_map(char::to_lowercase)
            .collect();
        Self::ALL
            .into_iter()
            .find(|m| m.name().to_lowercase() == key)
            .ok_or_else(|| format!("unknown aggregation method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BonError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("Random is a selection rule, not an aggregator")]
    RandomNotAggregator,
}

/// Collapses a step-score vector into one path score.
pub fn aggregate(scores: &StepScoreVector, method: AggregationMethod) -> Result<f64, BonError> {
    let p = scores.probs();
    if p.is_empty() {
        return Err(BonError::Invalid("empty score vector".into()));
    }
    let t = p.len() as f64;
    Ok(match method {
        AggregationMethod::Min => p.iter().copied().fold(f64::INFINITY, f64::min),
        AggregationMethod::Max => p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregationMethod::Average => p.iter().sum::<f64>() / t,
        AggregationMethod::SumLogPr => p.iter().map(|x| x.ln()).sum(),
        AggregationMethod::SumLogOdds => p.iter().map(|x| (x / (1.0 - x)).ln()).sum(),
        AggregationMethod::MeanOdds => p.iter().map(|x| x / (1.0 - x)).sum::<f64>() / t,
        AggregationMethod::Random => return Err(BonError::RandomNotAggregator),
    })
}

/// Lowest index holding the maximum; `-inf` entries are never chosen.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

fn random_index(count: usize, seed: u64) -> usize {
    stream_rng(seed, &[Label::Str("bon-random")]).random_range(0..count)
}

/// Index of the winning candidate.
pub fn select_best(
    candidates: &[(Solution, StepScoreVector)],
    method: AggregationMethod,
    seed: u64,
) -> Result<usize, BonError> {
    if candidates.is_empty() {
        return Err(BonError::Invalid("no candidates".into()));
    }
    if let Some(i) = candidates.iter().position(|(s, v)| s.steps.len() != v.len()) {
        return Err(BonError::Invalid(format!(
            "candidate {i}: score count does not match step count"
        )));
    }
    if method == AggregationMethod::Random {
        return Ok(random_index(candidates.len(), seed));
    }
    let values = candidates
        .iter()
        .map(|(_, v)| aggregate(v, method))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(argmax_first(&values).unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: BTreeMap<AggregationMethod, f64>,
    pub n: usize,
    pub problems: usize,
    pub seed: u64,
    /// Candidates whose scoring failed and were excluded from selection.
    pub scoring_failures: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        let accuracy: serde_json::Map<String, serde_json::Value> = self
            .accuracy
            .iter()
            .map(|(m, a)| (m.name().to_string(), (*a).into()))
            .collect();
        serde_json::json!({
            "accuracy": accuracy,
            "n": self.n,
            "problems": self.problems,
            "seed": self.seed,
            "scoring_failures": self.scoring_failures,
        })
    }
}

/// Selects among the first `n` candidates of every problem with each method
/// and reports the fraction of problems whose selected answer verifies.
pub fn evaluate_accuracy(
    problems: &[Problem],
    candidates: &[Vec<Solution>],
    scorer: &dyn Scorer,
    methods: &[AggregationMethod],
    n: usize,
    seed: u64,
) -> Result<EvalReport, BonError> {
    if problems.len() != candidates.len() {
        return Err(BonError::Invalid("one candidate list per problem required".into()));
    }
    if n == 0 || methods.is_empty() {
        return Err(BonError::Invalid("n and the method list must be non-empty".into()));
    }
    if let Some((p, c)) = problems.iter().zip(candidates).find(|(_, c)| c.len() < n) {
        return Err(BonError::Invalid(format!(
            "problem {} has {} candidates, need {n}",
            p.id,
            c.len()
        )));
    }

    let per_problem: Vec<(Vec<usize>, usize)> = problems
        .par_iter()
        .zip(candidates.par_iter())
        .map(|(problem, pool)| {
            let pool = &pool[..n];
            let scored: Vec<Option<StepScoreVector>> =
                pool.iter().map(|s| score_path(problem, s, scorer).ok()).collect();
            let failures = scored.iter().filter(|s| s.is_none()).count();
            let hits = methods
                .iter()
                .map(|&method| {
                    let winner = if method == AggregationMethod::Random {
                        Some(random_index(n, derive_seed(seed, &[Label::Str(&problem.id)])))
                    } else {
                        let values: Vec<f64> = scored
                            .iter()
                            .map(|v| {
                                v.as_ref()
                                    .and_then(|v| aggregate(v, method).ok())
                                    .unwrap_or(f64::NEG_INFINITY)
                            })
                            .collect();
                        argmax_first(&values)
                    };
                    usize::from(winner.is_some_and(|w| problem.is_correct(&pool[w].final_answer)))
                })
                .collect();
            (hits, failures)
        })
        .collect();

    let total = problems.len();
    let mut accuracy = BTreeMap::new();
    for (j, &method) in methods.iter().enumerate() {
        let correct: usize = per_problem.iter().map(|(hits, _)| hits[j]).sum();
        let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        accuracy.insert(method, acc);
    }
    Ok(EvalReport {
        accuracy,
        n,
        problems: total,
        seed,
        scoring_failures: per_problem.iter().map(|(_, f)| f).sum(),
    })
}

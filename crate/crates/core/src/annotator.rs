//! Per-problem state-action tree search that turns rollouts into step labels.
//!
//! Each iteration ("search step") picks the tree node with the highest PUCT
//! score among nodes that still hold unsearched incorrect rollouts, pops one
//! of those rollouts, and binary-searches its steps for the first prefix from
//! which no sampled completion succeeds. Every prefix evaluated along the way
//! becomes a tree node, and every non-root node with an estimate yields one
//! [`StepAnnotation`].

use crate::dataset::StepAnnotation;
use crate::mc::{McError, McEstimate, McEstimator, RolloutBudget, RolloutRecord, DEFAULT_ROLLOUTS_PER_PREFIX};
use crate::policy::{PolicyError, Problem};
use crate::telemetry::{BudgetCounters, Telemetry};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

pub const DEFAULT_C_PUCT: f64 = 0.125;
pub const DEFAULT_MAX_SEARCH_STEPS: u64 = 200;
pub const DEFAULT_MAX_ROLLOUTS: u64 = 1000;

/// Value term of the selection score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueFunction {
    /// `1 - |2 MC - 1|`: prefers prefixes whose outcome is most uncertain.
    #[default]
    Uncertainty,
    /// `MC` itself.
    McValue,
}

impl ValueFunction {
    pub fn value(self, mc: f64) -> f64 {
        match self {
            ValueFunction::Uncertainty => 1.0 - (2.0 * mc - 1.0).abs(),
            ValueFunction::McValue => mc,
        }
    }
}

/// `Q + c_puct * sqrt(parent_visits) / (1 + visits)`.
pub fn puct_score(value: f64, visits: u64, parent_visits: u64, c_puct: f64) -> f64 {
    value + c_puct * (parent_visits as f64).sqrt() / (1.0 + visits as f64)
}

/// Selection score of a node with the default value function; `None` when
/// the node has no estimate yet.
pub fn selection_score(node: &TreeNode, parent_visits: u64, c_puct: f64) -> Option<f64> {
    let mc = node.mc.as_ref().filter(|m| m.n_rollouts > 0)?;
    Some(puct_score(
        ValueFunction::Uncertainty.value(mc.value),
        node.visits,
        parent_visits,
        c_puct,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorLocation {
    /// 1-based index of the first step whose prefix has MC == 0.
    FirstError(usize),
    NoErrorFound,
}

/// Finds the smallest `t` in `(start, steps.len()]` with `MC(steps[..t]) == 0`.
///
/// `MC(steps[..start])` must already be known to be positive. The full path is
/// evaluated first; if it is not hopeless the search reports
/// [`ErrorLocation::NoErrorFound`]. Otherwise a bisection keeps the invariant
/// `MC(lo) > 0, MC(hi) == 0`, so at most `ceil(log2(T - start)) + 1` prefixes
/// are evaluated and none twice.
pub fn locate_first_error<S, E>(
    steps: &[S],
    start: usize,
    mut mc_fn: impl FnMut(&[S]) -> Result<f64, E>,
) -> Result<ErrorLocation, E> {
    let total = steps.len();
    if start >= total || mc_fn(steps)? > 0.0 {
        return Ok(ErrorLocation::NoErrorFound);
    }
    let (mut lo, mut hi) = (start, total);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mc_fn(&steps[..mid])? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ErrorLocation::FirstError(hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    /// Rollouts per newly estimated prefix.
    pub k: usize,
    pub c_puct: f64,
    pub max_search_steps: u64,
    pub max_rollouts: u64,
    pub value_function: ValueFunction,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_ROLLOUTS_PER_PREFIX,
            c_puct: DEFAULT_C_PUCT,
            max_search_steps: DEFAULT_MAX_SEARCH_STEPS,
            max_rollouts: DEFAULT_MAX_ROLLOUTS,
            value_function: ValueFunction::Uncertainty,
        }
    }
}

/// Search-step and rollout caps for one problem.
#[derive(Debug)]
pub struct SearchBudget {
    pub max_search_steps: u64,
    pub used_search_steps: u64,
    pub rollouts: RolloutBudget,
}

impl SearchBudget {
    pub fn new(max_search_steps: u64, max_rollouts: u64) -> Self {
        Self {
            max_search_steps,
            used_search_steps: 0,
            rollouts: RolloutBudget::new(max_rollouts),
        }
    }

    pub fn counters(&self) -> BudgetCounters {
        BudgetCounters {
            used_rollouts: self.rollouts.used(),
            max_rollouts: self.rollouts.max(),
            used_search_steps: self.used_search_steps,
            max_search_steps: self.max_search_steps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub prefix: Vec<String>,
    pub mc: Option<McEstimate>,
    pub visits: u64,
    /// Child node indices keyed by next-step text.
    pub children: BTreeMap<String, usize>,
    /// Incorrect rollouts through this node that have not been searched yet.
    pub incorrect_pool: VecDeque<RolloutRecord>,
    pub parent: Option<usize>,
}

impl TreeNode {
    fn new(prefix: Vec<String>, parent: Option<usize>) -> Self {
        Self {
            prefix,
            mc: None,
            visits: 0,
            children: BTreeMap::new(),
            incorrect_pool: VecDeque::new(),
            parent,
        }
    }

    pub fn mc_value(&self) -> Option<f64> {
        self.mc.as_ref().map(|m| m.value)
    }
}

/// Arena-backed state-action tree; node 0 is the empty-prefix root.
#[derive(Debug, Clone)]
pub struct StateActionTree {
    nodes: Vec<TreeNode>,
    fresh_evaluations: u64,
}

impl Default for StateActionTree {
    fn default() -> Self {
        Self::new()
    }
}

impl StateActionTree {
    pub fn new() -> Self {
        Self {
            nodes: vec![TreeNode::new(Vec::new(), None)],
            fresh_evaluations: 0,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Number of prefixes that received their first estimate.
    pub fn fresh_evaluations(&self) -> u64 {
        self.fresh_evaluations
    }

    /// Index of the node for `prefix`, creating intermediate nodes as needed.
    pub fn insert_path(&mut self, prefix: &[String]) -> usize {
        let mut at = 0;
        for (depth, step) in prefix.iter().enumerate() {
            at = match self.nodes[at].children.get(step) {
                Some(&child) => child,
                None => {
                    let child = self.nodes.len();
                    self.nodes.push(TreeNode::new(prefix[..=depth].to_vec(), Some(at)));
                    self.nodes[at].children.insert(step.clone(), child);
                    child
                }
            };
        }
        at
    }

    pub fn find(&self, prefix: &[String]) -> Option<usize> {
        prefix
            .iter()
            .try_fold(0, |at, step| self.nodes[at].children.get(step).copied())
    }

    /// Pools a new estimate into a node and queues its searchable failures.
    fn absorb(&mut self, index: usize, estimate: McEstimate) {
        let node = &mut self.nodes[index];
        node.incorrect_pool.extend(
            estimate
                .incorrect()
                .filter(|r| r.completion.as_ref().is_some_and(|s| s.len() > node.prefix.len()))
                .cloned(),
        );
        node.mc = Some(match node.mc.take() {
            Some(existing) => existing.merge(estimate),
            None => {
                self.fresh_evaluations += 1;
                estimate
            }
        });
    }

    fn record_visit(&mut self, index: usize) {
        let mut at = Some(index);
        while let Some(i) = at {
            self.nodes[i].visits += 1;
            at = self.nodes[i].parent;
        }
    }

    /// Highest-scoring node with an estimate in (0, 1] and a non-empty pool.
    /// Ties go to the lexicographically smallest prefix.
    fn select(&self, config: &AnnotatorConfig) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(mc) = node.mc_value() else { continue };
            if mc <= 0.0 || node.incorrect_pool.is_empty() {
                continue;
            }
            let parent_visits = node.parent.map_or(node.visits, |p| self.nodes[p].visits).max(1);
            let score = puct_score(
                config.value_function.value(mc),
                node.visits,
                parent_visits,
                config.c_puct,
            );
            best = match best {
                Some((s, j)) if s > score || (s == score && self.nodes[j].prefix <= node.prefix) => Some((s, j)),
                _ => Some((score, i)),
            };
        }
        best.map(|(_, i)| i)
    }

    /// Checks root emptiness and the one-step-extension rule on every edge.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.root().prefix.is_empty() || self.root().parent.is_some() {
            return Err("root must have an empty prefix and no parent".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            for (step, &child) in &node.children {
                let c = &self.nodes[child];
                if c.parent != Some(i)
                    || c.prefix.len() != node.prefix.len() + 1
                    || c.prefix[..node.prefix.len()] != node.prefix[..]
                    || c.prefix.last() != Some(step)
                {
                    return Err(format!("edge {i} -> {child} does not extend the prefix by one step"));
                }
                if c.visits > node.visits {
                    return Err(format!("child {child} has more visits than its parent {i}"));
                }
            }
        }
        Ok(())
    }

    /// One annotation per non-root node with an estimate, in depth-first
    /// order of step text. Each prefix appears once, carrying its pooled MC.
    pub fn harvest(&self, problem: &Problem) -> Vec<StepAnnotation> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if let (Some(mc), Some((step, prefix))) = (&node.mc, node.prefix.split_last()) {
                out.push(StepAnnotation {
                    problem_id: problem.id.clone(),
                    question: problem.question.clone(),
                    images: problem.images.clone(),
                    prefix: prefix.to_vec(),
                    step: step.clone(),
                    soft_label: mc.value,
                    n_rollouts: mc.n_rollouts,
                    n_correct: mc.n_correct,
                });
            }
            stack.extend(node.children.values().rev());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Root MC was 0 or 1; nothing to localize.
    Uninformative,
    SearchSteps,
    Rollouts,
    /// No node with MC > 0 holds an unsearched incorrect rollout.
    PoolEmpty,
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("problem {id}: {source}")]
    Policy { id: String, source: PolicyError },
    #[error("problem {id}: {message}")]
    Invalid { id: String, message: String },
}

#[derive(Debug)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub annotations: Vec<StepAnnotation>,
    pub stop: StopReason,
    pub budget: BudgetCounters,
    pub tree: StateActionTree,
}

impl ProblemOutcome {
    pub fn skipped(&self) -> bool {
        self.stop == StopReason::Uninformative
    }
}

/// Runs the search loop for one problem until a budget or the pool runs out.
pub fn annotate_problem(
    estimator: &McEstimator,
    problem: &Problem,
    config: &AnnotatorConfig,
    budget: &mut SearchBudget,
    telemetry: &Telemetry,
) -> Result<ProblemOutcome, AnnotateError> {
    problem.validate().map_err(|message| AnnotateError::Invalid {
        id: problem.id.clone(),
        message,
    })?;
    if config.k == 0 {
        return Err(AnnotateError::Invalid {
            id: problem.id.clone(),
            message: "k must be at least 1".into(),
        });
    }
    let policy_err = |source| AnnotateError::Policy {
        id: problem.id.clone(),
        source,
    };
    let mut tree = StateActionTree::new();
    telemetry.event(&problem.id, "start", budget.counters(), json!({}));

    let stop = 'search: {
        match estimator.estimate(problem, &[], config.k, &budget.rollouts, 0) {
            Ok(root) => tree.absorb(0, root),
            Err(McError::Policy(e)) => return Err(policy_err(e)),
            Err(_) => break 'search StopReason::Rollouts,
        }
        let root_mc = tree.root().mc_value().unwrap_or(0.0);
        telemetry.event(&problem.id, "root_estimate", budget.counters(), json!({"mc": root_mc}));
        if root_mc == 0.0 || root_mc == 1.0 {
            break 'search StopReason::Uninformative;
        }

        loop {
            if budget.used_search_steps >= budget.max_search_steps {
                break 'search StopReason::SearchSteps;
            }
            if budget.rollouts.remaining() == 0 {
                break 'search StopReason::Rollouts;
            }
            let Some(selected) = tree.select(config) else {
                break 'search StopReason::PoolEmpty;
            };
            budget.used_search_steps += 1;
            tree.record_visit(selected);
            let rollout = tree.nodes[selected]
                .incorrect_pool
                .pop_front()
                .expect("selected node has a pooled rollout");
            let steps = rollout.completion.map(|s| s.steps).unwrap_or_default();
            let start = tree.nodes[selected].prefix.len();

            let located = locate_first_error(&steps, start, |prefix| {
                let index = tree.insert_path(prefix);
                let have = tree.nodes[index].mc.as_ref().map_or(0, |m| m.n_rollouts);
                if have < config.k {
                    let fresh = estimator.estimate(problem, prefix, config.k - have, &budget.rollouts, have as u64)?;
                    tree.absorb(index, fresh);
                }
                Ok::<_, McError>(tree.nodes[index].mc_value().unwrap_or(0.0))
            });
            match located {
                Ok(location) => {
                    let first_error = match location {
                        ErrorLocation::FirstError(t) => Some(t),
                        ErrorLocation::NoErrorFound => None,
                    };
                    telemetry.event(
                        &problem.id,
                        "search_step",
                        budget.counters(),
                        json!({"from_prefix_len": start, "path_len": steps.len(), "first_error": first_error}),
                    );
                }
                Err(McError::Policy(e)) => return Err(policy_err(e)),
                Err(_) => break 'search StopReason::Rollouts,
            }
        }
    };

    let annotations = tree.harvest(problem);
    let counters = budget.counters();
    telemetry.event(
        &problem.id,
        "done",
        counters,
        json!({"stop": stop, "annotations": annotations.len(), "nodes": tree.nodes.len()}),
    );
    Ok(ProblemOutcome {
        problem_id: problem.id.clone(),
        annotations,
        stop,
        budget: counters,
        tree,
    })
}

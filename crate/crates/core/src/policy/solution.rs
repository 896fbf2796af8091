//! Tagged chain-of-thought parsing.
//!
//! Model output marks each reasoning step as `<step>…</step>` and the final
//! result as `<answer>…</answer>`. Connective prose between tags is ignored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const STEP_OPEN: &str = "<step>";
const STEP_CLOSE: &str = "</step>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// A parsed reasoning path: ordered steps plus the final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub steps: Vec<String>,
    pub final_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no steps")]
    NoSteps,
    #[error("no answer")]
    NoAnswer,
    #[error("malformed tags: {0}")]
    MalformedTags(String),
}

impl Solution {
    /// Builds a solution, enforcing at least one non-empty step and a non-empty answer.
    pub fn new(steps: Vec<String>, final_answer: impl Into<String>) -> Result<Self, ParseError> {
        let final_answer = final_answer.into();
        if steps.is_empty() {
            return Err(ParseError::NoSteps);
        }
        if let Some(i) = steps.iter().position(|s| s.trim().is_empty()) {
            return Err(ParseError::MalformedTags(format!("step {} is empty", i + 1)));
        }
        if final_answer.trim().is_empty() {
            return Err(ParseError::NoAnswer);
        }
        Ok(Self { steps, final_answer })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Canonical tagged rendering; `parse_solution(&s.render()) == Ok(s)` for
    /// trimmed, tag-free texts.
    pub fn render(&self) -> String {
        let mut out = render_steps(&self.steps);
        out.push_str(ANSWER_OPEN);
        out.push_str(&self.final_answer);
        out.push_str(ANSWER_CLOSE);
        out
    }
}

/// Renders steps as consecutive `<step>` spans, each followed by a newline.
pub fn render_steps<S: AsRef<str>>(steps: &[S]) -> String {
    let mut out = String::new();
    for step in steps {
        out.push_str(STEP_OPEN);
        out.push_str(step.as_ref());
        out.push_str(STEP_CLOSE);
        out.push('\n');
    }
    out
}

/// Extracts every step span in order and the first answer span.
pub fn parse_solution(raw: &str) -> Result<Solution, ParseError> {
    let mut steps = Vec::new();
    let mut answer: Option<String> = None;
    let mut rest = raw;

    loop {
        let next_step = rest.find(STEP_OPEN);
        let next_answer = rest.find(ANSWER_OPEN);
        let (open, close, at) = match (next_step, next_answer) {
            (None, None) => break,
            (Some(s), Some(a)) if a < s => (ANSWER_OPEN, ANSWER_CLOSE, a),
            (Some(s), _) => (STEP_OPEN, STEP_CLOSE, s),
            (None, Some(a)) => (ANSWER_OPEN, ANSWER_CLOSE, a),
        };
        check_no_stray_close(&rest[..at])?;
        let body_start = at + open.len();
        let body_len = rest[body_start..]
            .find(close)
            .ok_or_else(|| ParseError::MalformedTags(format!("unclosed {open}")))?;
        let body = &rest[body_start..body_start + body_len];
        if body.contains(STEP_OPEN) || body.contains(ANSWER_OPEN) {
            return Err(ParseError::MalformedTags(format!("nested tag inside {open}")));
        }
        let text = body.trim();
        if open == STEP_OPEN {
            if text.is_empty() {
                return Err(ParseError::MalformedTags("empty step".into()));
            }
            steps.push(text.to_string());
        } else if answer.is_none() {
            answer = Some(text.to_string());
        }
        rest = &rest[body_start + body_len + close.len()..];
    }
    check_no_stray_close(rest)?;

    if steps.is_empty() {
        return Err(ParseError::NoSteps);
    }
    match answer {
        Some(a) if !a.is_empty() => Ok(Solution { steps, final_answer: a }),
        _ => Err(ParseError::NoAnswer),
    }
}

fn check_no_stray_close(segment: &str) -> Result<(), ParseError> {
    for close in [STEP_CLOSE, ANSWER_CLOSE] {
        if segment.contains(close) {
            return Err(ParseError::MalformedTags(format!("{close} without opening tag")));
        }
    }
    Ok(())
}

//! PRM training records: marker interleaving, soft/hard labels, JSONL I/O
//! and corpus statistics.

use crate::policy::{ImageRef, Problem, Solution};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use thiserror::Error;

/// Literal marker placed after every step; the scorer reads one probability per marker.
pub const STEP_MARKER: &str = "<prm>";

/// One supervision point: a prefix, the step that follows it, and the MC
/// statistics of the prefix ending at that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAnnotation {
    pub problem_id: String,
    pub question: String,
    pub images: Vec<ImageRef>,
    pub prefix: Vec<String>,
    pub step: String,
    pub soft_label: f64,
    pub n_rollouts: usize,
    pub n_correct: usize,
}

impl StepAnnotation {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |message: String| Err(DatasetError::Invalid(message));
        if self.problem_id.is_empty() {
            return bad("empty problem_id".into());
        }
        if self.n_rollouts == 0 || self.n_correct > self.n_rollouts {
            return bad(format!(
                "{}: counts {}/{} out of range",
                self.problem_id, self.n_correct, self.n_rollouts
            ));
        }
        if self.soft_label != self.n_correct as f64 / self.n_rollouts as f64 {
            return bad(format!(
                "{}: soft label {} is not n_correct / n_rollouts",
                self.problem_id, self.soft_label
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Soft,
    Hard,
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soft" => Ok(LabelMode::Soft),
            "hard" => Ok(LabelMode::Hard),
            other => Err(format!("unknown label mode {other:?} (expected soft or hard)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("I/O error after {written} records: {source}")]
    Io { written: usize, source: std::io::Error },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

/// `[q, x1, <prm>, x2, <prm>, ...]` as a question plus step/marker pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MarkedSequence {
    pub question: String,
    pub segments: Vec<(String, &'static str)>,
}

impl MarkedSequence {
    pub fn marker_count(&self) -> usize {
        self.segments.len()
    }

    /// Flat element list: question, then each step followed by its marker.
    pub fn elements(&self) -> Vec<&str> {
        std::iter::once(self.question.as_str())
            .chain(self.segments.iter().flat_map(|(s, m)| [s.as_str(), *m]))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = self.question.clone();
        for (step, marker) in &self.segments {
            out.push('\n');
            out.push_str(step);
            out.push_str(marker);
        }
        out
    }
}

pub fn interleave_markers(problem: &Problem, solution: &Solution) -> Result<MarkedSequence, DatasetError> {
    if solution.steps.is_empty() {
        return Err(DatasetError::Invalid("solution has no steps".into()));
    }
    Ok(MarkedSequence {
        question: problem.question.clone(),
        segments: solution.steps.iter().map(|s| (s.clone(), STEP_MARKER)).collect(),
    })
}

/// 1 iff the step's MC estimate is positive.
pub fn hard_label(mc: f64) -> Result<u8, DatasetError> {
    if !(0.0..=1.0).contains(&mc) {
        return Err(DatasetError::Invalid(format!("MC value {mc} outside [0, 1]")));
    }
    Ok(u8::from(mc > 0.0))
}

#[derive(Serialize, Deserialize)]
struct Record {
    problem_id: String,
    question: String,
    images: Vec<ImageRef>,
    prefix: Vec<String>,
    step: String,
    label: serde_json::Number,
    n_rollouts: usize,
    n_correct: usize,
}

/// Writes one JSON object per annotation and returns the number of lines written.
pub fn emit(annotations: &[StepAnnotation], mode: LabelMode, sink: &mut dyn Write) -> Result<usize, DatasetError> {
    for a in annotations {
        a.validate()?;
    }
    let mut written = 0;
    for a in annotations {
        let label = match mode {
            LabelMode::Soft => serde_json::Number::from_f64(a.soft_label)
                .ok_or_else(|| DatasetError::Invalid(format!("{}: non-finite label", a.problem_id)))?,
            LabelMode::Hard => hard_label(a.soft_label)?.into(),
        };
        let record = Record {
            problem_id: a.problem_id.clone(),
            question: a.question.clone(),
            images: a.images.clone(),
            prefix: a.prefix.clone(),
            step: a.step.clone(),
            label,
            n_rollouts: a.n_rollouts,
            n_correct: a.n_correct,
        };
        let mut line = serde_json::to_vec(&record).map_err(|e| DatasetError::Invalid(e.to_string()))?;
        line.push(b'\n');
        sink.write_all(&line)
            .map_err(|source| DatasetError::Io { written, source })?;
        written += 1;
    }
    sink.flush().map_err(|source| DatasetError::Io { written, source })?;
    Ok(written)
}

fn record_to_annotation(record: Record) -> Result<StepAnnotation, String> {
    if record.n_rollouts == 0 {
        return Err("n_rollouts must be positive".into());
    }
    let soft = record.n_correct as f64 / record.n_rollouts as f64;
    let hard = hard_label(soft).map_err(|e| e.to_string())?;
    let label = record.label.as_f64().ok_or("label is not a number")?;
    if label != soft && label != f64::from(hard) {
        return Err(format!("label {} matches neither soft {soft} nor hard {hard}", label));
    }
    let annotation = StepAnnotation {
        problem_id: record.problem_id,
        question: record.question,
        images: record.images,
        prefix: record.prefix,
        step: record.step,
        soft_label: soft,
        n_rollouts: record.n_rollouts,
        n_correct: record.n_correct,
    };
    annotation.validate().map_err(|e| e.to_string())?;
    Ok(annotation)
}

/// Reads an annotation file written by [`emit`] in either label mode. Soft
/// labels are recovered from the rollout counts.
pub fn load(reader: impl BufRead) -> Result<Vec<StepAnnotation>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            written: out.len(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let annotation = serde_json::from_str::<Record>(&line)
            .map_err(|e| e.to_string())
            .and_then(record_to_annotation)
            .map_err(|message| DatasetError::Line { line: idx + 1, message })?;
        out.push(annotation);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub records: usize,
    pub problems: usize,
    /// Path length (prefix steps plus the labelled step) -> record count.
    pub steps_per_record: BTreeMap<usize, usize>,
    /// Ten equal-width bins over [0, 1]; 1.0 falls in the last bin.
    pub label_histogram: [usize; 10],
    pub zero_fraction: f64,
    pub one_fraction: f64,
    pub errors: Vec<LineError>,
}

#[derive(Deserialize)]
struct StatsRecord {
    problem_id: String,
    prefix: Vec<String>,
    label: f64,
}

/// Summarizes an annotation file; malformed lines are listed and skipped.
pub fn stats(reader: impl BufRead) -> Result<DatasetStats, std::io::Error> {
    let mut problems = BTreeSet::new();
    let mut steps_per_record = BTreeMap::new();
    let mut label_histogram = [0usize; 10];
    let (mut records, mut zeros, mut ones) = (0usize, 0usize, 0usize);
    let mut errors = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match serde_json::from_str::<StatsRecord>(&line) {
            Ok(r) if (0.0..=1.0).contains(&r.label) => r,
            Ok(r) => {
                errors.push(LineError {
                    line: idx + 1,
                    message: format!("label {} outside [0, 1]", r.label),
                });
                continue;
            }
            Err(e) => {
                errors.push(LineError {
                    line: idx + 1,
                    message: e.to_string(),
                });
                continue;
            }
        };
        records += 1;
        problems.insert(record.problem_id);
        *steps_per_record.entry(record.prefix.len() + 1).or_insert(0) += 1;
        label_histogram[((record.label * 10.0) as usize).min(9)] += 1;
        zeros += usize::from(record.label == 0.0);
        ones += usize::from(record.label == 1.0);
    }

    let fraction = |n: usize| if records == 0 { 0.0 } else { n as f64 / records as f64 };
    Ok(DatasetStats {
        records,
        problems: problems.len(),
        steps_per_record,
        label_histogram,
        zero_fraction: fraction(zeros),
        one_fraction: fraction(ones),
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::AnswerKind;

    fn annotation(n_correct: usize, n_rollouts: usize) -> StepAnnotation {
        StepAnnotation {
            problem_id: "p1".into(),
            question: "q".into(),
            images: vec![],
            prefix: vec!["a".into()],
            step: "b".into(),
            soft_label: n_correct as f64 / n_rollouts as f64,
            n_rollouts,
            n_correct,
        }
    }

    fn problem() -> Problem {
        Problem {
            id: "p".into(),
            question: "q".into(),
            images: vec![],
            gold_answer: "1".into(),
            kind: AnswerKind::FillInBlank,
        }
    }

    #[test]
    fn markers_follow_every_step() {
        let s = Solution::new(vec!["x1".into(), "x2".into()], "a").unwrap();
        let m = interleave_markers(&problem(), &s).unwrap();
        assert_eq!(m.elements(), vec!["q", "x1", "<prm>", "x2", "<prm>"]);
        let one = Solution::new(vec!["x1".into()], "a").unwrap();
        assert_eq!(
            interleave_markers(&problem(), &one).unwrap().elements(),
            vec!["q", "x1", "<prm>"]
        );
        let empty = Solution {
            steps: vec![],
            final_answer: "a".into(),
        };
        assert!(interleave_markers(&problem(), &empty).is_err());
    }

    #[test]
    fn hard_label_threshold() {
        assert_eq!(hard_label(0.0).unwrap(), 0);
        assert_eq!(hard_label(0.25).unwrap(), 1);
        assert_eq!(hard_label(1.0).unwrap(), 1);
        assert!(hard_label(1.5).is_err());
        assert!(hard_label(-0.1).is_err());
        assert!(hard_label(f64::NAN).is_err());
    }

    #[test]
    fn emit_soft_and_hard() {
        let anns = vec![annotation(0, 8), annotation(3, 8), annotation(8, 8)];
        let mut soft = Vec::new();
        assert_eq!(emit(&anns, LabelMode::Soft, &mut soft).unwrap(), 3);
        let text = String::from_utf8(soft.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(
            text.starts_with(r#"{"problem_id":"p1","question":"q","images":[],"prefix":["a"],"step":"b","label":0.0,"#)
        );

        let mut hard = Vec::new();
        emit(&anns, LabelMode::Hard, &mut hard).unwrap();
        let labels: Vec<f64> = String::from_utf8(hard.clone())
            .unwrap()
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["label"]
                    .as_f64()
                    .unwrap()
            })
            .collect();
        assert_eq!(labels, vec![0.0, 1.0, 1.0]);

        assert_eq!(load(soft.as_slice()).unwrap(), anns);
        assert_eq!(load(hard.as_slice()).unwrap(), anns);
    }

    #[test]
    fn emit_rejects_inconsistent_labels() {
        let mut bad = annotation(3, 8);
        bad.soft_label = 0.5;
        assert!(matches!(
            emit(&[bad], LabelMode::Soft, &mut Vec::new()),
            Err(DatasetError::Invalid(_))
        ));
    }

    #[test]
    fn emit_reports_partial_writes() {
        struct FailAfter(usize);
        impl Write for FailAfter {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                if self.0 == 0 {
                    return Err(std::io::Error::other("disk full"));
                }
                self.0 -= 1;
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let anns = vec![annotation(1, 2); 3];
        match emit(&anns, LabelMode::Soft, &mut FailAfter(2)) {
            Err(DatasetError::Io { written, .. }) => assert_eq!(written, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_reports_line_numbers() {
        let text = "\n{\"problem_id\":\"p\",\"question\":\"q\",\"images\":[],\"prefix\":[],\"step\":\"s\",\"label\":0.7,\"n_rollouts\":2,\"n_correct\":1}\n";
        assert!(matches!(load(text.as_bytes()), Err(DatasetError::Line { line: 2, .. })));
    }

    #[test]
    fn stats_on_empty_input() {
        let s = stats(&b""[..]).unwrap();
        assert_eq!(
            (s.records, s.problems, s.zero_fraction, s.one_fraction),
            (0, 0, 0.0, 0.0)
        );
        assert!(s.errors.is_empty());
        assert_eq!(s.label_histogram, [0; 10]);
    }

    fn stats_line(label: f64) -> String {
        format!(
            r#"{{"problem_id":"p{label}","question":"q","images":[],"prefix":["a"],"step":"b","label":{label},"n_rollouts":2,"n_correct":1}}"#
        )
    }

    #[test]
    fn stats_fractions_and_histogram() {
        let text: String = [0.0, 0.0, 0.5, 1.0, 1.0]
            .iter()
            .map(|&l| stats_line(l) + "\n")
            .collect();
        let s = stats(text.as_bytes()).unwrap();
        assert_eq!(s.records, 5);
        assert_eq!(s.zero_fraction, 0.4);
        assert_eq!(s.one_fraction, 0.4);
        assert_eq!(s.label_histogram, [2, 0, 0, 0, 0, 1, 0, 0, 0, 2]);
        assert_eq!(s.steps_per_record.get(&2), Some(&5));
        assert_eq!(s.problems, 3);
    }

    #[test]
    fn stats_skips_corrupted_lines() {
        let mut lines: Vec<String> = (0..5).map(|i| stats_line(i as f64 / 4.0)).collect();
        lines[2] = "{\"problem_id\": broken".into();
        let s = stats(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(s.records, 4);
        assert_eq!(s.errors.len(), 1);
        assert_eq!(s.errors[0].line, 3);
    }
}

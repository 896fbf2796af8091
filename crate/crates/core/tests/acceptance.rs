//! Acceptance suite. One line per criterion; exits non-zero if any fails.

use prm_forge::annotator::{
    annotate_problem, locate_first_error, AnnotatorConfig, ErrorLocation, SearchBudget, StopReason,
};
use prm_forge::bon::{aggregate, evaluate_accuracy, AggregationMethod, SWEEP_CANDIDATES};
use prm_forge::cli::{cmd_generate, RunConfig};
use prm_forge::dataset::{emit, hard_label, load, LabelMode, StepAnnotation};
use prm_forge::mc::{McEstimator, RolloutBudget};
use prm_forge::policy::{
    parse_solution, render_steps, AnswerKind, CompletionRequest, ImageRef, MockPolicy, MockScript, PlantedSchedule,
    PolicyClient, Problem, SamplingParams, Solution, TableEntry,
};
use prm_forge::prm::{prm_loss, OracleScorer, StepScoreVector};
use prm_forge::seed::stream_rng;
use prm_forge::telemetry::Telemetry;
use rand::Rng;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

const SEED: u64 = 20240601;
const AGG_REL_TOL: f64 = 1e-9;
const AGG_ABS_FLOOR: f64 = 1e-12;
const CALIBRATION_TOL: f64 = 0.05;
const RANDOM_BASELINE_TOL: f64 = 0.06;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn problem(id: &str) -> Problem {
    Problem {
        id: id.into(),
        question: format!("question {id}"),
        images: vec![],
        gold_answer: "42".into(),
        kind: AnswerKind::FillInBlank,
    }
}

fn estimator(script: MockScript, seed: u64) -> McEstimator {
    let client = PolicyClient::new(Arc::new(MockPolicy::new(script, seed)));
    McEstimator::new(client, SamplingParams::default())
}

// Shewchuk exact partial sums, rounded once at the end.
fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    let mut hi = 0.0;
    while let Some(x) = partials.pop() {
        let prev = hi;
        hi += x;
        let lo = x - (hi - prev);
        if lo != 0.0 {
            if let Some(&next) = partials.last() {
                if (lo < 0.0) == (next < 0.0) {
                    let y = lo * 2.0;
                    let x2 = hi + y;
                    if y == x2 - hi {
                        hi = x2;
                    }
                }
            }
            break;
        }
    }
    hi
}

fn oracle_aggregate(raw: &[f64], method: AggregationMethod) -> f64 {
    let p: Vec<f64> = raw.iter().map(|&x| x.clamp(1e-6, 1.0 - 1e-6)).collect();
    let t = p.len() as f64;
    let odds = |x: f64| x / (1.0 - x);
    match method {
        AggregationMethod::Min => p.iter().cloned().reduce(f64::min).unwrap(),
        AggregationMethod::Max => p.iter().cloned().reduce(f64::max).unwrap(),
        AggregationMethod::Average => fsum(p.iter().cloned()) / t,
        AggregationMethod::SumLogPr => fsum(p.iter().map(|x| x.ln())),
        AggregationMethod::SumLogOdds => fsum(p.iter().map(|&x| odds(x).ln())),
        AggregationMethod::MeanOdds => fsum(p.iter().map(|&x| odds(x))) / t,
        AggregationMethod::Random => unreachable!(),
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = stream_rng(SEED, &["acceptance".into(), "aggregators".into()]);
    let methods = [
        AggregationMethod::Min,
        AggregationMethod::Max,
        AggregationMethod::Average,
        AggregationMethod::SumLogPr,
        AggregationMethod::SumLogOdds,
        AggregationMethod::MeanOdds,
    ];
    let mut worst: f64 = 0.0;
    for case in 0..10_000 {
        let len = rng.random_range(1..=64);
        let raw: Vec<f64> = (0..len)
            .map(|_| match rng.random_range(0..20) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random::<f64>(),
            })
            .collect();
        let scores = StepScoreVector::new(raw.clone()).map_err(|e| format!("case {case}: {e}"))?;
        for method in methods {
            let got = aggregate(&scores, method).map_err(|e| e.to_string())?;
            let want = oracle_aggregate(&raw, method);
            let diff = (got - want).abs();
            if diff > AGG_ABS_FLOOR && diff > AGG_REL_TOL * want.abs() {
                return Err(format!("case {case} {method}: got {got}, oracle {want}"));
            }
            if want != 0.0 {
                worst = worst.max(diff / want.abs());
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        return Err(format!("took {elapsed:.2}s"));
    }
    Ok(format!(
        "10000 vectors x 6 methods, worst rel err {worst:.2e}, {elapsed:.2}s"
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = stream_rng(SEED, &["acceptance".into(), "bisection".into()]);
    let mut max_ratio = 0usize;
    for case in 0..1000 {
        let t: usize = rng.random_range(1..=32);
        // first_error == t + 1 means the chain is clean.
        let first_error: usize = rng.random_range(1..=t + 1);
        let positive: Vec<f64> = (0..=t).map(|_| rng.random_range(0.01..=1.0)).collect();
        let mc = |len: usize| if len >= first_error { 0.0 } else { positive[len] };
        let steps: Vec<usize> = (1..=t).collect();

        let linear = (1..=t).find(|&len| mc(len) == 0.0);
        let mut calls = 0usize;
        let found = locate_first_error::<_, ()>(&steps, 0, |prefix| {
            calls += 1;
            Ok(mc(prefix.len()))
        })
        .unwrap();
        let expected = linear.map_or(ErrorLocation::NoErrorFound, ErrorLocation::FirstError);
        if found != expected {
            return Err(format!("case {case}: T={t}, got {found:?}, linear scan {expected:?}"));
        }
        let bound = (t as f64).log2().ceil() as usize + 1;
        if calls > bound {
            return Err(format!("case {case}: T={t} took {calls} evaluations, bound {bound}"));
        }
        max_ratio = max_ratio.max(calls);
    }
    Ok(format!(
        "1000 chains agree with linear scan, max {max_ratio} evaluations"
    ))
}

fn criterion_3() -> Outcome {
    let mut parts = Vec::new();
    for q in [0.1, 0.3, 0.5, 0.9] {
        let est = estimator(MockScript::Bernoulli { q, steps: 3 }, SEED);
        let budget = RolloutBudget::new(1000);
        let mc = est
            .estimate(&problem("calibration"), &[], 1000, &budget, 0)
            .map_err(|e| e.to_string())?;
        if mc.n_rollouts != 1000 || (mc.value - q).abs() > CALIBRATION_TOL {
            return Err(format!("q={q}: estimate {} from {} rollouts", mc.value, mc.n_rollouts));
        }
        parts.push(format!("q={q}:{:.3}", mc.value));
    }
    Ok(parts.join(" "))
}

// Twenty distinct three-step continuations per prefix length; which of them
// reach the gold answer rotates with the length, so the tree keeps branching.
fn branching_table() -> MockScript {
    let entries = (0..400)
        .map(|len| TableEntry {
            problem_id: None,
            prefix_len: Some(len),
            completions: (0..20)
                .map(|j| {
                    let steps: Vec<String> = (0..3).map(|t| format!("b{j} L{len} t{t}")).collect();
                    let answer = if (j + len) % 20 < 5 { "42" } else { "7" };
                    format!("{}<answer>{answer}</answer>", render_steps(&steps))
                })
                .collect(),
        })
        .collect();
    MockScript::Table {
        entries,
        fallback: None,
    }
}

fn criterion_4() -> Outcome {
    let config = AnnotatorConfig::default();
    let (mut peak_rollouts, mut peak_steps, mut capped) = (0, 0, 0);
    for i in 0..100 {
        let script = match i % 4 {
            0 => MockScript::Bernoulli { q: 0.5, steps: 12 },
            1 => branching_table(),
            2 => MockScript::PlantedError {
                steps: 16,
                error_step: 9,
                p_good: 0.3,
                schedule: PlantedSchedule::Random,
            },
            _ => MockScript::PlantedError {
                steps: 6,
                error_step: 2,
                p_good: 0.9,
                schedule: PlantedSchedule::Random,
            },
        };
        let est = estimator(script, SEED + i);
        let mut budget = SearchBudget::new(200, 1000);
        let p = problem(&format!("budget-{i}"));
        let outcome =
            annotate_problem(&est, &p, &config, &mut budget, &Telemetry::disabled()).map_err(|e| e.to_string())?;
        capped += usize::from(matches!(outcome.stop, StopReason::Rollouts | StopReason::SearchSteps));
        let counters = budget.counters();
        let drawn = est.client().ledger().snapshot().samples;
        if counters.used_rollouts > 1000 || counters.used_search_steps > 200 || drawn > 1000 {
            return Err(format!(
                "{}: rollouts {} (ledger {drawn}), search steps {}",
                p.id, counters.used_rollouts, counters.used_search_steps
            ));
        }
        peak_rollouts = peak_rollouts.max(drawn);
        peak_steps = peak_steps.max(counters.used_search_steps);
    }
    Ok(format!(
        "100 problems ({capped} stopped at a cap), peak {peak_rollouts} rollouts, peak {peak_steps} search steps"
    ))
}

fn write_problems(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join("problems.jsonl");
    let lines: Vec<String> = (0..n)
        .map(|i| serde_json::to_string(&problem(&format!("p{i:02}"))).unwrap())
        .collect();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn generate_config(dir: &Path, problems: &Path, out: &str, mode: LabelMode) -> RunConfig {
    RunConfig {
        problems: Some(problems.to_path_buf()),
        out: Some(dir.join(out)),
        seed: SEED,
        workers: 1,
        label_mode: mode,
        telemetry: false,
        ..RunConfig::default()
    }
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let problems = write_problems(dir.path(), 20);
    let mut runs = Vec::new();
    for run in 0..3 {
        let config = generate_config(dir.path(), &problems, &format!("run{run}.jsonl"), LabelMode::Soft);
        cmd_generate(&config, &Telemetry::disabled()).map_err(|e| e.to_string())?;
        runs.push(std::fs::read(config.out.unwrap()).map_err(|e| e.to_string())?);
    }
    if runs[0].is_empty() {
        return Err("no annotations produced".into());
    }
    if runs.iter().any(|r| r != &runs[0]) {
        return Err("runs differ".into());
    }
    Ok(format!("3 runs, {} identical bytes", runs[0].len()))
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let problems = write_problems(dir.path(), 40);
    let soft_cfg = generate_config(dir.path(), &problems, "soft.jsonl", LabelMode::Soft);
    let hard_cfg = generate_config(dir.path(), &problems, "hard.jsonl", LabelMode::Hard);
    cmd_generate(&soft_cfg, &Telemetry::disabled()).map_err(|e| e.to_string())?;
    cmd_generate(&hard_cfg, &Telemetry::disabled()).map_err(|e| e.to_string())?;
    let soft = std::fs::read_to_string(soft_cfg.out.unwrap()).map_err(|e| e.to_string())?;
    let hard = std::fs::read_to_string(hard_cfg.out.unwrap()).map_err(|e| e.to_string())?;
    let (soft, hard): (Vec<&str>, Vec<&str>) = (soft.lines().collect(), hard.lines().collect());
    if soft.is_empty() || soft.len() != hard.len() {
        return Err(format!("{} soft records, {} hard records", soft.len(), hard.len()));
    }
    let (mut zeros, mut ones) = (0, 0);
    for (i, (s, h)) in soft.iter().zip(&hard).enumerate() {
        let s: serde_json::Value = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let h: serde_json::Value = serde_json::from_str(h).map_err(|e| e.to_string())?;
        let mc = s["label"].as_f64().ok_or("soft label missing")?;
        let expected = u8::from(mc > 0.0);
        let derived = hard_label(mc).map_err(|e| e.to_string())?;
        let written = h["label"].as_u64().ok_or("hard label missing")?;
        if derived != expected || written != expected as u64 {
            return Err(format!("record {i}: mc {mc}, hard_label {derived}, written {written}"));
        }
        if expected == 0 {
            zeros += 1;
        } else {
            ones += 1;
        }
    }
    if zeros == 0 || ones == 0 {
        return Err(format!("corpus lacks one label class ({zeros} zero, {ones} one)"));
    }
    Ok(format!("{} records ({zeros} label 0, {ones} label 1)", soft.len()))
}

fn criterion_7() -> Outcome {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    for y in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let losses = grid
            .iter()
            .map(|&p| prm_loss(&[p], &[y]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let argmin = (0..losses.len())
            .min_by(|&a, &b| losses[a].total_cmp(&losses[b]))
            .unwrap();
        let nearest = (0..grid.len())
            .min_by(|&a, &b| (grid[a] - y).abs().total_cmp(&(grid[b] - y).abs()))
            .unwrap();
        if argmin != nearest {
            return Err(format!(
                "y={y}: minimum at p={}, nearest grid point {}",
                grid[argmin], grid[nearest]
            ));
        }
    }
    Ok("minimum at nearest grid point for all 5 targets".into())
}

fn criterion_8() -> Outcome {
    let max_n = *SWEEP_CANDIDATES.iter().max().unwrap();
    let policy = MockPolicy::new(MockScript::Bernoulli { q: 0.15, steps: 4 }, SEED);
    let client = PolicyClient::new(Arc::new(policy));
    let problems: Vec<Problem> = (0..200).map(|i| problem(&format!("bon-{i:03}"))).collect();
    let mut candidates = Vec::new();
    for p in &problems {
        let request = CompletionRequest {
            problem: p,
            prefix: &[],
            first_draw: 0,
        };
        let texts = client
            .complete(&request, &SamplingParams::default(), max_n)
            .map_err(|e| e.to_string())?;
        let parsed = texts
            .into_iter()
            .map(|t| parse_solution(&t.map_err(|e| e.to_string())?).map_err(|e| e.to_string()))
            .collect::<Result<Vec<Solution>, _>>()?;
        candidates.push(parsed);
    }
    let scorer = OracleScorer::new();
    let methods = [AggregationMethod::MeanOdds, AggregationMethod::Random];
    let mut previous = -1.0;
    let mut parts = Vec::new();
    for n in SWEEP_CANDIDATES {
        let report =
            evaluate_accuracy(&problems, &candidates, &scorer, &methods, n, SEED).map_err(|e| e.to_string())?;
        let oracle = report.accuracy[&AggregationMethod::MeanOdds];
        let random = report.accuracy[&AggregationMethod::Random];
        let expected: f64 = problems
            .iter()
            .zip(&candidates)
            .map(|(p, c)| c[..n].iter().filter(|s| p.is_correct(&s.final_answer)).count() as f64 / n as f64)
            .sum::<f64>()
            / problems.len() as f64;
        if oracle < previous {
            return Err(format!("accuracy fell to {oracle} at N={n} from {previous}"));
        }
        if (random - expected).abs() > RANDOM_BASELINE_TOL {
            return Err(format!("N={n}: random {random}, analytic {expected:.4}"));
        }
        previous = oracle;
        parts.push(format!("N={n}:{oracle:.3}/rand {random:.3} vs {expected:.3}"));
    }
    Ok(parts.join(" "))
}

fn random_text(rng: &mut impl Rng) -> String {
    const PIECES: [&str; 12] = [
        "x", "=", " ", "∑", "é", "数学", "🙂", "\"q\"", "\\", "\n", "<step>", "√2",
    ];
    let len = rng.random_range(1..12);
    (0..len).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
}

fn criterion_9() -> Outcome {
    let mut rng = stream_rng(SEED, &["acceptance".into(), "round-trip".into()]);
    let mut records = 0;
    for set in 0..1000 {
        let count = rng.random_range(0..6);
        let annotations: Vec<StepAnnotation> = (0..count)
            .map(|_| {
                let n = rng.random_range(1..=16usize);
                let c = rng.random_range(0..=n);
                let images = if rng.random_bool(0.2) {
                    vec![ImageRef::Uri {
                        uri: format!("file:///img/{}.png", random_text(&mut rng)),
                    }]
                } else {
                    vec![]
                };
                StepAnnotation {
                    problem_id: format!("id-{}", random_text(&mut rng)),
                    question: random_text(&mut rng),
                    images,
                    prefix: (0..rng.random_range(0..4)).map(|_| random_text(&mut rng)).collect(),
                    step: random_text(&mut rng),
                    soft_label: c as f64 / n as f64,
                    n_rollouts: n,
                    n_correct: c,
                }
            })
            .collect();
        let mut buf = Vec::new();
        emit(&annotations, LabelMode::Soft, &mut buf).map_err(|e| format!("set {set}: {e}"))?;
        let back = load(buf.as_slice()).map_err(|e| format!("set {set}: {e}"))?;
        if back != annotations {
            return Err(format!("set {set} changed in round trip"));
        }
        records += count;
    }
    Ok(format!("1000 sets, {records} records"))
}

fn criterion_10() -> Outcome {
    let script = MockScript::PlantedError {
        steps: 4,
        error_step: 3,
        p_good: 0.5,
        schedule: PlantedSchedule::Stratified,
    };
    let config = AnnotatorConfig::default();
    for run in 0..50u64 {
        let est = estimator(script.clone(), SEED + run);
        let mut budget = SearchBudget::new(config.max_search_steps, config.max_rollouts);
        let p = problem("planted");
        let outcome =
            annotate_problem(&est, &p, &config, &mut budget, &Telemetry::disabled()).map_err(|e| e.to_string())?;
        let label = |len: usize, step: &str| {
            outcome
                .annotations
                .iter()
                .find(|a| a.prefix.len() == len && a.step == step)
                .map(|a| a.soft_label)
        };
        let flawed = label(2, "step 3 (flawed)");
        let good = label(1, "step 2");
        if flawed != Some(0.0) || !good.is_some_and(|v| v > 0.0) {
            return Err(format!("run {run}: step 2 label {good:?}, step 3 label {flawed:?}"));
        }
    }
    Ok("50 seeded runs localize the flaw at step 3".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("aggregator oracle equivalence", criterion_1),
        ("binary-search oracle equivalence", criterion_2),
        ("MC estimator calibration", criterion_3),
        ("budget safety", criterion_4),
        ("end-to-end determinism", criterion_5),
        ("soft/hard consistency", criterion_6),
        ("loss minimum", criterion_7),
        ("BoN dominance", criterion_8),
        ("round-trip fidelity", criterion_9),
        ("planted-error annotation", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

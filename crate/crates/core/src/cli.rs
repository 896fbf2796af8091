//! Batch commands: `generate`, `rerank` / `eval-agg`, and `stats`.

use crate::annotator::{annotate_problem, AnnotatorConfig, ProblemOutcome, SearchBudget};
use crate::bon::{evaluate_accuracy, AggregationMethod, DEFAULT_CANDIDATES};
use crate::dataset::{self, emit, LabelMode};
use crate::mc::McEstimator;
use crate::policy::{
    load_problems, parse_solution, CompletionRequest, MockPolicy, MockScript, PlantedSchedule, PolicyBackend,
    PolicyClient, PolicyError, Problem, RemoteConfig, RemotePolicy, SamplingParams, Solution, UsageSnapshot,
};
use crate::prm::{ConstantScorer, OracleScorer, RandomScorer, RemoteScorer, RemoteScorerConfig, Scorer};
use crate::telemetry::Telemetry;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const ENV_API_BASE: &str = "PRM_FORGE_API_BASE";
pub const ENV_API_KEY: &str = "PRM_FORGE_API_KEY";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_AUTH: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Oracle,
    Constant,
    Random,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerSettings {
    pub kind: ScorerKind,
    pub constant: f64,
    pub remote: RemoteScorerConfig,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Oracle,
            constant: 0.5,
            remote: RemoteScorerConfig::default(),
        }
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub remote: RemoteConfig,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub mock_script: Option<PathBuf>,
    pub sampling: SamplingParams,
    pub search: AnnotatorConfig,
    /// Problems annotated or evaluated concurrently.
    pub workers: usize,
    /// Concurrent backend calls within one MC estimate.
    pub rollout_workers: usize,
    pub seed: u64,
    pub label_mode: LabelMode,
    pub problems: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub scorer: ScorerSettings,
    pub n: Vec<usize>,
    pub methods: Vec<AggregationMethod>,
    pub telemetry: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            remote: RemoteConfig::default(),
            api_key_env: ENV_API_KEY.into(),
            mock_script: None,
            sampling: SamplingParams::default(),
            search: AnnotatorConfig::default(),
            workers: 1,
            rollout_workers: 1,
            seed: 0,
            label_mode: LabelMode::Soft,
            problems: None,
            out: None,
            candidates: None,
            scorer: ScorerSettings::default(),
            n: vec![DEFAULT_CANDIDATES],
            methods: vec![AggregationMethod::MeanOdds],
            telemetry: true,
        }
    }
}

impl<'de> Deserialize<'de> for AggregationMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults, then environment, then the TOML config file (if any).
    /// Flags are applied afterwards by the caller.
    pub fn resolve(config_file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(base) = env(ENV_API_BASE) {
            merge(&mut value, json!({"remote": {"api_base": base}}));
        }
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
            let file: Value = toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
            merge(&mut value, file);
        }
        let mut config: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
        if config.remote.api_key.is_none() {
            config.remote.api_key = env(&config.api_key_env);
        }
        if config.scorer.remote.api_key.is_none() {
            config.scorer.remote.api_key = config.remote.api_key.clone();
        }
        Ok(config)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "prm-forge",
    version,
    about = "Step-level process supervision and Best-of-N reranking"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotate problems with step-level labels via tree search over rollouts
    Generate(GenerateArgs),
    /// Best-of-N evaluation of candidate paths
    Rerank(RerankArgs),
    /// Best-of-N evaluation across aggregation methods (all seven by default)
    EvalAgg(RerankArgs),
    /// Summarize an annotation file
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problems JSONL
    #[arg(long)]
    pub problems: Option<PathBuf>,
    /// Output path (annotations for generate, report for rerank) [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Policy backend [default: mock]
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Mock policy script (JSON)
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Root seed for every random stream [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Problems processed concurrently [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sampling temperature [default: 1.0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Top-k sampling [default: 50]
    #[arg(long)]
    pub top_k: Option<u32>,
    /// Nucleus sampling mass [default: 0.9]
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Suppress JSON telemetry on stderr
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Rollout cap per problem [default: 1000]
    #[arg(long)]
    pub max_rollouts: Option<u64>,
    /// Search-step cap per problem [default: 200]
    #[arg(long)]
    pub max_search_steps: Option<u64>,
    /// Rollouts drawn per newly estimated prefix [default: 8]
    #[arg(long)]
    pub k: Option<usize>,
    /// PUCT exploration coefficient [default: 0.125]
    #[arg(long)]
    pub c_puct: Option<f64>,
    /// Label written to the output [default: soft]
    #[arg(long, value_parser = clap::value_parser!(LabelMode))]
    pub label_mode: Option<LabelMode>,
}

impl clap::builder::ValueParserFactory for LabelMode {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<LabelMode>())
    }
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Candidate paths JSONL; without it, candidates are sampled from the backend
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Candidates per problem; a comma list runs a sweep, e.g. 2,4,8,16 [default: 16]
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Aggregation methods, comma separated: random, min, average, max, sum-log-pr, sum-log-odds, mean-odds [default: mean-odds; eval-agg: all]
    #[arg(long, value_delimiter = ',', value_parser = |s: &str| s.parse::<AggregationMethod>())]
    pub methods: Option<Vec<AggregationMethod>>,
    /// Step scorer [default: oracle]
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerKind>,
    /// Scoring endpoint for --scorer remote
    #[arg(long)]
    pub scorer_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Annotation JSONL to summarize
    pub path: PathBuf,
}

fn apply_common(config: &mut RunConfig, args: &CommonArgs) {
    if let Some(v) = &args.problems {
        config.problems = Some(v.clone());
    }
    if let Some(v) = &args.out {
        config.out = Some(v.clone());
    }
    if let Some(v) = args.backend {
        config.backend = v;
    }
    if let Some(v) = &args.mock_script {
        config.mock_script = Some(v.clone());
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.workers {
        config.workers = v;
    }
    if let Some(v) = args.temperature {
        config.sampling.temperature = v;
    }
    if let Some(v) = args.top_k {
        config.sampling.top_k = v;
    }
    if let Some(v) = args.top_p {
        config.sampling.top_p = v;
    }
    if args.quiet {
        config.telemetry = false;
    }
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I, env: impl Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Generate(args) => generate_from_args(&args, &env, &mut out),
        Command::Rerank(args) => rerank_from_args(&args, false, &env, &mut out),
        Command::EvalAgg(args) => rerank_from_args(&args, true, &env, &mut out),
        Command::Stats(args) => cmd_stats(&args.path, &mut out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn generate_from_args(
    args: &GenerateArgs,
    env: &dyn Fn(&str) -> Option<String>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let mut config = RunConfig::resolve(args.common.config.as_deref(), env)?;
    apply_common(&mut config, &args.common);
    if let Some(v) = args.max_rollouts {
        config.search.max_rollouts = v;
    }
    if let Some(v) = args.max_search_steps {
        config.search.max_search_steps = v;
    }
    if let Some(v) = args.k {
        config.search.k = v;
    }
    if let Some(v) = args.c_puct {
        config.search.c_puct = v;
    }
    if let Some(v) = args.label_mode {
        config.label_mode = v;
    }
    let telemetry = telemetry_for(&config);
    let summary = cmd_generate(&config, &telemetry)?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    )
    .map_err(|e| CliError::input(format!("cannot write summary: {e}")))?;
    Ok(if summary.failed > 0 { EXIT_FAILURE } else { EXIT_OK })
}

fn rerank_from_args(
    args: &RerankArgs,
    all_methods: bool,
    env: &dyn Fn(&str) -> Option<String>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let mut config = RunConfig::resolve(args.common.config.as_deref(), env)?;
    apply_common(&mut config, &args.common);
    if all_methods {
        config.methods = AggregationMethod::ALL.to_vec();
    }
    if let Some(v) = &args.candidates {
        config.candidates = Some(v.clone());
    }
    if let Some(v) = &args.n {
        config.n = v.clone();
    }
    if let Some(v) = &args.methods {
        config.methods = v.clone();
    }
    if let Some(v) = args.scorer {
        config.scorer.kind = v;
    }
    if let Some(v) = &args.scorer_url {
        config.scorer.remote.url = v.clone();
    }
    let report = cmd_rerank(&config)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &config.out {
        std::fs::write(path, format!("{text}\n"))
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    }
    writeln!(out, "{text}").map_err(|e| CliError::input(format!("cannot write report: {e}")))?;
    Ok(EXIT_OK)
}

fn telemetry_for(config: &RunConfig) -> Telemetry {
    if config.telemetry {
        Telemetry::to_writer(std::io::stderr())
    } else {
        Telemetry::disabled()
    }
}

fn open_input(path: Option<&Path>, what: &str) -> Result<BufReader<File>, CliError> {
    let path = path.ok_or_else(|| CliError::usage(format!("--{what} is required")))?;
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))
}

fn read_problems(config: &RunConfig) -> Result<Vec<Problem>, CliError> {
    let reader = open_input(config.problems.as_deref(), "problems")?;
    load_problems(reader).map_err(|e| CliError::input(format!("problems: {e}")))
}

/// Default mock: a four-step path that forks into a flawed third step half the time.
pub fn default_mock_script() -> MockScript {
    MockScript::PlantedError {
        steps: 4,
        error_step: 3,
        p_good: 0.5,
        schedule: PlantedSchedule::Random,
    }
}

fn build_backend(config: &RunConfig) -> Result<Arc<dyn PolicyBackend>, CliError> {
    match config.backend {
        BackendKind::Mock => {
            let script = match &config.mock_script {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::input(format!("cannot read mock script {}: {e}", path.display())))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::input(format!("invalid mock script {}: {e}", path.display())))?
                }
                None => default_mock_script(),
            };
            Ok(Arc::new(MockPolicy::new(script, config.seed)))
        }
        BackendKind::Remote => {
            if config.remote.api_base.is_empty() {
                return Err(CliError::usage(format!(
                    "remote backend needs remote.api_base or {ENV_API_BASE}"
                )));
            }
            Ok(Arc::new(RemotePolicy::new(config.remote.clone())))
        }
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError {
            code: EXIT_FAILURE,
            message: format!("cannot start workers: {e}"),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub problem_id: String,
    pub stop: Option<crate::annotator::StopReason>,
    pub annotations: usize,
    pub used_rollouts: u64,
    pub used_search_steps: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub problems: usize,
    pub processed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub annotations: usize,
    pub rollouts_used: u64,
    pub search_steps_used: u64,
    pub usage: UsageSnapshot,
    pub per_problem: Vec<ProblemSummary>,
}

/// Annotates every problem and writes the records in input order.
pub fn cmd_generate(config: &RunConfig, telemetry: &Telemetry) -> Result<GenerateSummary, CliError> {
    let problems = read_problems(config)?;
    let client = PolicyClient::new(build_backend(config)?);
    let estimator = McEstimator::new(client.clone(), config.sampling.clone()).with_workers(config.rollout_workers);
    let pool = thread_pool(config.workers)?;

    let outcomes: Vec<Result<ProblemOutcome, crate::annotator::AnnotateError>> = pool.install(|| {
        problems
            .par_iter()
            .map(|problem| {
                let mut budget = SearchBudget::new(config.search.max_search_steps, config.search.max_rollouts);
                annotate_problem(&estimator, problem, &config.search, &mut budget, telemetry)
            })
            .collect()
    });

    if let Some(e) = outcomes.iter().find_map(|o| match o {
        Err(crate::annotator::AnnotateError::Policy {
            source: PolicyError::Auth(m),
            ..
        }) => Some(m.clone()),
        _ => None,
    }) {
        return Err(CliError {
            code: EXIT_AUTH,
            message: format!("backend authentication failed: {e}"),
        });
    }

    let mut sink: Box<dyn Write> = match &config.out {
        Some(path) => {
            Box::new(BufWriter::new(File::create(path).map_err(|e| {
                CliError::input(format!("cannot create {}: {e}", path.display()))
            })?))
        }
        None => Box::new(std::io::stdout()),
    };

    let mut summary = GenerateSummary {
        problems: problems.len(),
        processed: 0,
        skipped: 0,
        failed: 0,
        annotations: 0,
        rollouts_used: 0,
        search_steps_used: 0,
        usage: UsageSnapshot::default(),
        per_problem: Vec::with_capacity(problems.len()),
    };
    for (problem, outcome) in problems.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                let written = emit(&o.annotations, config.label_mode, &mut sink).map_err(|e| CliError {
                    code: EXIT_FAILURE,
                    message: format!("writing annotations: {e}"),
                })?;
                summary.processed += 1;
                summary.skipped += usize::from(o.skipped());
                summary.annotations += written;
                summary.rollouts_used += o.budget.used_rollouts;
                summary.search_steps_used += o.budget.used_search_steps;
                summary.per_problem.push(ProblemSummary {
                    problem_id: o.problem_id,
                    stop: Some(o.stop),
                    annotations: written,
                    used_rollouts: o.budget.used_rollouts,
                    used_search_steps: o.budget.used_search_steps,
                    error: None,
                });
            }
            Err(e) => {
                summary.failed += 1;
                summary.per_problem.push(ProblemSummary {
                    problem_id: problem.id.clone(),
                    stop: None,
                    annotations: 0,
                    used_rollouts: 0,
                    used_search_steps: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    sink.flush().map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("writing annotations: {e}"),
    })?;
    summary.usage = client.ledger().snapshot();
    Ok(summary)
}

/// One line of a candidates file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub problem_id: String,
    pub candidates: Vec<CandidateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CandidateEntry {
    Structured {
        steps: Vec<String>,
        answer: String,
        /// 1-based first wrong step for the oracle scorer; absent or null = correct path.
        #[serde(default)]
        first_error: Option<usize>,
    },
    Raw {
        text: String,
    },
}

fn load_candidates(path: &Path, problems: &[Problem]) -> Result<(Vec<Vec<Solution>>, OracleScorer), CliError> {
    let reader =
        BufReader::new(File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?);
    let mut by_problem: HashMap<String, Vec<Solution>> = HashMap::new();
    let mut oracle = OracleScorer::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::input(format!("{} line {}: {m}", path.display(), idx + 1));
        let set: CandidateSet = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let list = by_problem.entry(set.problem_id.clone()).or_default();
        for entry in set.candidates {
            let solution = match entry {
                CandidateEntry::Structured {
                    steps,
                    answer,
                    first_error,
                } => {
                    let s = Solution::new(steps, answer).map_err(|e| bad(e.to_string()))?;
                    oracle.plant(&set.problem_id, &s, first_error);
                    s
                }
                CandidateEntry::Raw { text } => parse_solution(&text).map_err(|e| bad(e.to_string()))?,
            };
            list.push(solution);
        }
    }
    let lists = problems
        .iter()
        .map(|p| {
            by_problem
                .remove(&p.id)
                .ok_or_else(|| CliError::input(format!("no candidates for problem {}", p.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((lists, oracle))
}

fn sample_candidates(config: &RunConfig, problems: &[Problem], n: usize) -> Result<Vec<Vec<Solution>>, CliError> {
    let client = PolicyClient::new(build_backend(config)?);
    let pool = thread_pool(config.workers)?;
    pool.install(|| {
        problems
            .par_iter()
            .map(|problem| {
                let request = CompletionRequest {
                    problem,
                    prefix: &[],
                    first_draw: 0,
                };
                let texts = client
                    .complete(&request, &config.sampling, 4 * n)
                    .map_err(|e| match e {
                        PolicyError::Auth(m) => CliError {
                            code: EXIT_AUTH,
                            message: m,
                        },
                        e => CliError {
                            code: EXIT_FAILURE,
                            message: format!("problem {}: {e}", problem.id),
                        },
                    })?;
                let parsed: Vec<Solution> = texts
                    .into_iter()
                    .filter_map(|t| t.ok().and_then(|t| parse_solution(&t).ok()))
                    .take(n)
                    .collect();
                if parsed.len() < n {
                    return Err(CliError::input(format!(
                        "problem {}: only {} parseable candidates sampled, need {n}",
                        problem.id,
                        parsed.len()
                    )));
                }
                Ok(parsed)
            })
            .collect()
    })
}

/// Runs Best-of-N for every requested `n` and method.
pub fn cmd_rerank(config: &RunConfig) -> Result<Value, CliError> {
    if config.n.is_empty() || config.n.contains(&0) {
        return Err(CliError::usage("--n values must be positive"));
    }
    if config.methods.is_empty() {
        return Err(CliError::usage("--methods must name at least one method"));
    }
    let problems = read_problems(config)?;
    let max_n = *config.n.iter().max().expect("non-empty");
    let (candidates, oracle) = match &config.candidates {
        Some(path) => load_candidates(path, &problems)?,
        None => (sample_candidates(config, &problems, max_n)?, OracleScorer::new()),
    };
    if let Some((p, c)) = problems.iter().zip(&candidates).find(|(_, c)| c.len() < max_n) {
        return Err(CliError::input(format!(
            "problem {} has {} candidates, need {max_n}",
            p.id,
            c.len()
        )));
    }
    let scorer: Box<dyn Scorer> = match config.scorer.kind {
        ScorerKind::Oracle => Box::new(oracle),
        ScorerKind::Constant => Box::new(ConstantScorer(config.scorer.constant)),
        ScorerKind::Random => Box::new(RandomScorer { seed: config.seed }),
        ScorerKind::Remote => {
            if config.scorer.remote.url.is_empty() {
                return Err(CliError::usage("--scorer remote needs --scorer-url"));
            }
            Box::new(RemoteScorer::new(config.scorer.remote.clone()))
        }
    };
    let pool = thread_pool(config.workers)?;
    let reports = config
        .n
        .iter()
        .map(|&n| {
            pool.install(|| evaluate_accuracy(&problems, &candidates, scorer.as_ref(), &config.methods, n, config.seed))
                .map(|r| r.to_json())
                .map_err(|e| CliError::input(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json!({ "reports": reports }))
}

/// Prints corpus statistics for an annotation file.
pub fn cmd_stats(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    let report = dataset::stats(BufReader::new(file))
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&report).expect("stats serialize")
    )
    .map_err(|e| CliError::input(format!("cannot write report: {e}")))?;
    Ok(EXIT_OK)
}

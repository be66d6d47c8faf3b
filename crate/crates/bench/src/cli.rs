//! Command-line front end: configuration, subcommands and exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use segsql_core::agents::{build_backend, BackendKind, BackendSpec, Reasoner, Strategy, StrategyPolicy};
use segsql_core::orchestrator::{compute_rewards, run_episode, Ablations, Condition, EpisodeConfig, RewardConfig};
use segsql_core::schema::DEFAULT_RETENTION_FLOOR;

use crate::condition::{make_condition, required_agents, RosterBlueprint};
use crate::dataset::{load_dataset, DatasetBundle, Provenance};
use crate::exec::TimingMode;
use crate::report::{group_rows, read_records, render_csv, render_text, write_records, BenchmarkReport, GroupBy};
use crate::runner::{run_benchmark, RunSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATASET: i32 = 2;

/// A failure mapped to its exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Dataset(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Dataset(_) => EXIT_DATASET,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Dataset(m) => write!(f, "dataset error: {m}"),
        }
    }
}

/// Everything a run depends on. Loaded from `--config`, then overridden
/// by flags, validated, and echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub provenance: Provenance,
    pub condition: Condition,
    /// Agent count; derived from the condition when it fixes one.
    pub agents: Option<usize>,
    pub shots: usize,
    pub strategy: StrategyPolicy,
    pub delta: usize,
    pub max_rounds: Option<usize>,
    pub ablations: Ablations,
    pub attempts: usize,
    pub backend: BackendSpec,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    pub timeout_secs: f64,
    pub timing: TimingMode,
    pub trace_dir: Option<PathBuf>,
    pub rewards: RewardConfig,
    pub question_ids: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            provenance: Provenance::SpiderDev,
            condition: Condition::TwoPart,
            agents: None,
            shots: 0,
            strategy: StrategyPolicy::default(),
            delta: DEFAULT_RETENTION_FLOOR,
            max_rounds: None,
            ablations: Ablations::default(),
            attempts: 1,
            backend: BackendSpec::oracle(),
            seed: 0,
            out: None,
            jobs: 0,
            timeout_secs: 30.0,
            timing: TimingMode::VmSteps,
            trace_dir: None,
            rewards: RewardConfig::default(),
            question_ids: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn n_agents(&self) -> usize {
        required_agents(self.condition).or(self.agents).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.dataset.is_none() {
            return bad("no dataset root given (--dataset)".into());
        }
        match (required_agents(self.condition), self.agents) {
            (Some(need), Some(got)) if need != got => {
                return bad(format!("condition {} runs with {need} agent(s), not {got}", self.condition));
            }
            (None, None) => return bad(format!("condition {} needs --agents", self.condition)),
            (_, Some(0)) => return bad("at least one agent is required".into()),
            _ => {}
        }
        if self.max_rounds == Some(0) {
            return bad("max_rounds must be at least 1".into());
        }
        if self.attempts == 0 {
            return bad("attempts must be at least 1".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad(format!("timeout must be positive, got {}", self.timeout_secs));
        }
        Ok(())
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_rounds: self.max_rounds,
            retention_floor: self.delta,
            strategy: self.strategy,
            shots: self.shots,
            condition: self.condition,
            ablations: self.ablations,
            attempts: self.attempts,
            seed: self.seed,
        }
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            episode: self.episode_config(),
            rewards: self.rewards,
            jobs: self.jobs,
            timeout: Duration::from_secs_f64(self.timeout_secs),
            timing: self.timing,
            trace_dir: self.trace_dir.clone(),
            config_echo: serde_json::to_value(self).expect("config serializes"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "segsql", version, about = "Cooperative text-to-SQL over segmented schemas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Show which tables each agent holds.
    Partition(RunArgs),
    /// Run a benchmark and write report, records and summary.
    Run(RunArgs),
    /// Re-aggregate a records file.
    Report(ReportArgs),
    /// Run one question and print its trace.
    Episode(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// spider-dev, spider-test, bird-dev or toy.
    #[arg(long)]
    pub provenance: Option<Provenance>,
    /// OnePart, OneAll, TwoPart, TwoAll or Custom.
    #[arg(long)]
    pub condition: Option<Condition>,
    /// Agent count; alone it selects the Custom condition.
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub shots: Option<usize>,
    /// direct, decompose or heuristic.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Retention floor: columns kept per extracted table.
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub attempts: Option<usize>,
    #[arg(long, value_parser = ["oracle", "remote", "replay"])]
    pub backend: Option<String>,
    /// Share of gold references the oracle can see.
    #[arg(long)]
    pub oracle_recall: Option<f64>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Cassette to append remote exchanges to.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Cassette to replay.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Per-query execution limit in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// vm-steps or wall-clock.
    #[arg(long)]
    pub timing: Option<TimingMode>,
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Restrict to these question ids; repeatable.
    #[arg(long = "question-id")]
    pub question_id: Vec<String>,
    #[arg(long)]
    pub no_retention: bool,
    #[arg(long)]
    pub no_exchange: bool,
    #[arg(long)]
    pub no_checking: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Records file (JSON lines) written by `run`.
    pub records: PathBuf,
    /// difficulty, condition or agent.
    #[arg(long, default_value = "difficulty")]
    pub group_by: GroupBy,
    /// text or csv.
    #[arg(long, default_value = "text")]
    pub format: String,
    /// A stored report to compare the recomputed overall scores with.
    #[arg(long)]
    pub check: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<StrategyPolicy, CliError> {
    match s.trim().to_lowercase().as_str() {
        "direct" => Ok(StrategyPolicy::Fixed {
            strategy: Strategy::Direct,
        }),
        "decompose" => Ok(StrategyPolicy::Fixed {
            strategy: Strategy::Decompose,
        }),
        "heuristic" => Ok(StrategyPolicy::default()),
        other => Err(CliError::Config(format!(
            "unknown strategy `{other}` (direct, decompose, heuristic)"
        ))),
    }
}

fn backend_spec(base: BackendSpec, a: &RunArgs) -> Result<BackendSpec, CliError> {
    let kind = match a.backend.as_deref() {
        Some("oracle") => BackendKind::Oracle,
        Some("remote") => BackendKind::Remote,
        Some("replay") => BackendKind::Replay,
        Some(other) => return Err(CliError::Config(format!("unknown backend `{other}`"))),
        None => base.kind(),
    };
    let mut spec = if base.kind() == kind {
        base
    } else {
        match kind {
            BackendKind::Oracle => BackendSpec::oracle(),
            BackendKind::Remote => BackendSpec::Remote {
                endpoint: String::new(),
                model: String::new(),
                temperature: 0.0,
                api_key_env: "OPENAI_API_KEY".into(),
                timeout_secs: 60.0,
                min_interval_secs: 0.0,
                record: None,
            },
            BackendKind::Replay => BackendSpec::Replay {
                cassette: PathBuf::new(),
                model: String::new(),
                temperature: 0.0,
            },
        }
    };
    match &mut spec {
        BackendSpec::Oracle { recall } => {
            if let Some(r) = a.oracle_recall {
                *recall = r;
            }
        }
        BackendSpec::Remote {
            endpoint,
            model,
            temperature,
            api_key_env,
            record,
            ..
        } => {
            if let Some(v) = &a.endpoint {
                endpoint.clone_from(v);
            }
            if let Some(v) = &a.model {
                model.clone_from(v);
            }
            if let Some(v) = a.temperature {
                *temperature = v;
            }
            if let Some(v) = &a.api_key_env {
                api_key_env.clone_from(v);
            }
            if let Some(v) = &a.record {
                *record = Some(v.clone());
            }
            if endpoint.is_empty() || model.is_empty() {
                return Err(CliError::Config("remote backend needs --endpoint and --model".into()));
            }
        }
        BackendSpec::Replay {
            cassette,
            model,
            temperature,
        } => {
            if let Some(v) = a.cassette.as_ref().or(a.record.as_ref()) {
                cassette.clone_from(v);
            }
            if let Some(v) = &a.model {
                model.clone_from(v);
            }
            if let Some(v) = a.temperature {
                *temperature = v;
            }
            if cassette.as_os_str().is_empty() {
                return Err(CliError::Config("replay backend needs --cassette".into()));
            }
        }
    }
    if a.record.is_some() && !matches!(spec, BackendSpec::Remote { .. } | BackendSpec::Replay { .. }) {
        return Err(CliError::Config("--record applies to the remote backend".into()));
    }
    Ok(spec)
}

/// Builds the effective configuration: file first, then flags.
pub fn resolve_config(a: &RunArgs) -> Result<RunConfig, CliError> {
    let mut c = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &a.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = a.provenance {
        c.provenance = v;
    }
    match (a.condition, a.agents) {
        (Some(cond), n) => {
            c.condition = cond;
            c.agents = n.or_else(|| required_agents(cond));
        }
        (None, Some(n)) => {
            if required_agents(c.condition) != Some(n) {
                c.condition = Condition::Custom;
            }
            c.agents = Some(n);
        }
        (None, None) => {
            if c.agents.is_none() {
                c.agents = required_agents(c.condition);
            }
        }
    }
    if let Some(v) = a.shots {
        c.shots = v;
    }
    if let Some(v) = &a.strategy {
        c.strategy = parse_strategy(v)?;
    }
    if let Some(v) = a.delta {
        c.delta = v;
    }
    if let Some(v) = a.max_rounds {
        c.max_rounds = Some(v);
    }
    if let Some(v) = a.attempts {
        c.attempts = v;
    }
    c.backend = backend_spec(c.backend, a)?;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = &a.out {
        c.out = Some(v.clone());
    }
    if let Some(v) = a.jobs {
        c.jobs = v;
    }
    if let Some(v) = a.timeout {
        c.timeout_secs = v;
    }
    if let Some(v) = a.timing {
        c.timing = v;
    }
    if let Some(v) = &a.trace_dir {
        c.trace_dir = Some(v.clone());
    }
    if !a.question_id.is_empty() {
        c.question_ids.clone_from(&a.question_id);
    }
    if a.no_retention {
        c.ablations.retention = false;
    }
    if a.no_exchange {
        c.ablations.exchange = false;
    }
    if a.no_checking {
        c.ablations.checking = false;
    }
    c.validate()?;
    Ok(c)
}

fn load(c: &RunConfig) -> Result<DatasetBundle, CliError> {
    let root = c.dataset.as_deref().expect("validated");
    let bundle = load_dataset(root, c.provenance).map_err(|e| CliError::Dataset(e.to_string()))?;
    if c.question_ids.is_empty() {
        return Ok(bundle);
    }
    let missing: Vec<&String> = c
        .question_ids
        .iter()
        .filter(|id| !bundle.questions.iter().any(|q| &q.question_id == *id))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Dataset(format!("unknown question id(s): {missing:?}")));
    }
    Ok(bundle.filter_questions(&c.question_ids))
}

fn blueprint(c: &RunConfig, bundle: &DatasetBundle) -> Result<RosterBlueprint, CliError> {
    make_condition(bundle, c.condition, c.n_agents(), c.seed).map_err(|e| CliError::Config(e.to_string()))
}

fn backend(c: &RunConfig) -> Result<Arc<dyn Reasoner>, CliError> {
    build_backend(&c.backend).map_err(|e| CliError::Config(e.to_string()))
}

/// Table assignment per database and agent.
pub fn cmd_partition(c: &RunConfig) -> Result<String, CliError> {
    let bundle = load(c)?;
    let bp = blueprint(c, &bundle)?;
    let mut out = format!("condition {} with {} agent(s), seed {}\n", bp.condition, bp.n_agents, bp.seed);
    for (db, parts) in &bp.privates {
        let _ = writeln!(out, "{db}");
        for (id, s) in bp.agent_ids().iter().zip(parts) {
            let names: Vec<&str> = s.table_names().collect();
            let _ = writeln!(out, "  {id:<10} {}", names.join(", "));
        }
    }
    Ok(out)
}

/// Runs the benchmark, writes its outputs under `out` and returns the report.
pub fn cmd_run(c: &RunConfig) -> Result<BenchmarkReport, CliError> {
    let bundle = load(c)?;
    let bp = blueprint(c, &bundle)?;
    let backend = backend(c)?;
    let out = c.out.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    let run = run_benchmark(&bundle, &bp, backend, &c.settings()).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = &out {
        write_outputs(dir, c, &run.report, &run.records).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    Ok(run.report)
}

fn write_outputs(
    dir: &Path,
    c: &RunConfig,
    report: &BenchmarkReport,
    records: &[crate::metrics::EvalRecord],
) -> std::io::Result<()> {
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(c)? + "\n")?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    write_records(&dir.join("records.jsonl"), records)?;
    std::fs::write(dir.join("summary.csv"), render_csv(&group_rows(records, GroupBy::Difficulty)))
}

/// Runs the first selected question and returns its trace and scores as JSON.
pub fn cmd_episode(c: &RunConfig) -> Result<String, CliError> {
    let bundle = load(c)?;
    let q = bundle
        .questions
        .first()
        .ok_or_else(|| CliError::Dataset("no question selected".into()))?;
    let bp = blueprint(c, &bundle)?;
    let backend = backend(c)?;
    let roster = bp
        .roster(&q.db_id, &backend)
        .ok_or_else(|| CliError::Dataset(format!("no schema for `{}`", q.db_id)))?;
    let trace = run_episode(q, &roster, &c.episode_config()).map_err(|e| CliError::Config(e.to_string()))?;
    let rewards = compute_rewards(&trace, &q.gold_refs, &c.rewards);
    let doc = serde_json::json!({ "trace": trace, "rewards": rewards });
    Ok(serde_json::to_string_pretty(&doc).expect("trace serializes") + "\n")
}

pub fn cmd_report(a: &ReportArgs) -> Result<String, CliError> {
    let records = read_records(&a.records).map_err(|e| CliError::Dataset(format!("{}: {e}", a.records.display())))?;
    let rows = group_rows(&records, a.group_by);
    let mut out = match a.format.as_str() {
        "text" => render_text(&rows),
        "csv" => render_csv(&rows),
        other => return Err(CliError::Config(format!("unknown format `{other}` (text, csv)"))),
    };
    if let Some(path) = &a.check {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let stored: BenchmarkReport =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let overall = crate::report::Bucket::of(&records);
        if overall != stored.overall {
            return Err(CliError::Dataset(format!(
                "records disagree with {}: recomputed {overall:?}, stored {:?}",
                path.display(),
                stored.overall
            )));
        }
        if a.format == "text" {
            out.push_str("overall matches the stored report\n");
        }
    }
    Ok(out)
}

/// Parses `args` and runs the selected command, printing to stdout/stderr.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Report(a) => cmd_report(a),
        Command::Partition(a) => resolve_config(a).and_then(|c| cmd_partition(&c)),
        Command::Episode(a) => resolve_config(a).and_then(|c| cmd_episode(&c)),
        Command::Run(a) => resolve_config(a).and_then(|c| {
            let report = cmd_run(&c)?;
            let ex = report.overall.ex.map_or_else(|| "n/a (no questions)".to_string(), |x| format!("{x:.2}"));
            let ves = report.overall.ves.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
            Ok(format!(
                "{} questions, {} failed; EX {ex}, VES {ves}\n",
                report.overall.count, report.episodes.failed
            ))
        }),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("segsql: {e}");
            e.exit_code()
        }
    }
}

//! Runs a roster over every question of a bundle and scores the answers.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

use segsql_core::agents::{Question, Reasoner};
use segsql_core::orchestrator::{compute_rewards, run_episode, EpisodeConfig, EpisodeTrace, RewardConfig};
use segsql_core::sql::{classify_difficulty, parse_sql, Difficulty};

use crate::condition::RosterBlueprint;
use crate::dataset::DatasetBundle;
use crate::exec::{is_ordered, measure, results_match, Database, TimingMode};
use crate::metrics::{exact_match, EvalRecord};
use crate::report::{BenchmarkReport, ReportMeta};

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub episode: EpisodeConfig,
    pub rewards: RewardConfig,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    pub timeout: Duration,
    pub timing: TimingMode,
    /// Directory receiving one trace file per question.
    pub trace_dir: Option<PathBuf>,
    /// Echoed into the report.
    pub config_echo: Value,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            rewards: RewardConfig::default(),
            jobs: 0,
            timeout: Duration::from_secs(30),
            timing: TimingMode::VmSteps,
            trace_dir: None,
            config_echo: Value::Null,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error("cannot write traces: {0}")]
    Traces(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub records: Vec<EvalRecord>,
    pub report: BenchmarkReport,
}

/// Bucket for a question: its dataset label, else the gold query's shape.
pub fn difficulty_of(q: &Question) -> Difficulty {
    q.difficulty_label
        .or_else(|| q.gold_sql.as_deref().and_then(|g| parse_sql(g).ok()).map(|a| classify_difficulty(&a)))
        .unwrap_or(Difficulty::Hard)
}

fn file_stem(question_id: &str) -> String {
    question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Runs and scores a single question. Never fails: problems land in the
/// record's `error`.
pub fn evaluate_question(
    bundle: &DatasetBundle,
    blueprint: &RosterBlueprint,
    backend: &Arc<dyn Reasoner>,
    settings: &RunSettings,
    q: &Question,
) -> (EvalRecord, Option<EpisodeTrace>) {
    let mut rec = EvalRecord {
        question_id: q.question_id.clone(),
        db_id: q.db_id.clone(),
        condition: blueprint.condition.to_string(),
        n_agents: blueprint.n_agents,
        shots: settings.episode.shots,
        predicted_sql: None,
        gold_sql: q.gold_sql.clone().unwrap_or_default(),
        exec_match: false,
        exact_match: false,
        valid: false,
        gold_runtime: 0.0,
        pred_runtime: 0.0,
        difficulty: difficulty_of(q),
        rounds: 0,
        termination: None,
        rewards: None,
        error: None,
    };
    let Some(roster) = blueprint.roster(&q.db_id, backend) else {
        rec.error = Some(format!("no roster for database `{}`", q.db_id));
        return (rec, None);
    };
    let trace = match run_episode(q, &roster, &settings.episode) {
        Ok(t) => t,
        Err(e) => {
            rec.error = Some(e.to_string());
            return (rec, None);
        }
    };
    rec.rounds = trace.rounds.len();
    rec.termination = Some(trace.termination);
    rec.rewards = Some(compute_rewards(&trace, &q.gold_refs, &settings.rewards));
    rec.predicted_sql = trace.final_sql.as_ref().map(|c| c.text.clone());
    if rec.predicted_sql.is_none() {
        let failures: Vec<&str> = trace.rounds.iter().flat_map(|r| r.failures.iter().map(String::as_str)).collect();
        if !failures.is_empty() {
            rec.error = Some(failures.join("; "));
        }
    }

    let Some(path) = bundle.database(&q.db_id) else {
        rec.error = Some(format!("no database file for `{}`", q.db_id));
        return (rec, Some(trace));
    };
    let db = match Database::open(path) {
        Ok(db) => db,
        Err(e) => {
            rec.error = Some(e.to_string());
            return (rec, Some(trace));
        }
    };
    let gold = match measure(&db, &rec.gold_sql, settings.timeout, settings.timing) {
        Ok(g) => Some(g),
        Err(e) => {
            rec.error = Some(format!("gold query failed: {e}"));
            None
        }
    };
    if let Some((_, cost)) = &gold {
        rec.gold_runtime = *cost;
    }
    if let Some(pred_sql) = rec.predicted_sql.clone() {
        rec.exact_match = exact_match(&pred_sql, &rec.gold_sql);
        match measure(&db, &pred_sql, settings.timeout, settings.timing) {
            Ok((pred, cost)) => {
                rec.valid = true;
                rec.pred_runtime = cost;
                if let Some((g, _)) = &gold {
                    rec.exec_match = results_match(&pred.rows, &g.rows, is_ordered(&rec.gold_sql));
                }
            }
            Err(e) => {
                tracing::debug!(question = %q.question_id, error = %e, "prediction failed to execute");
            }
        }
    }
    (rec, Some(trace))
}

/// Evaluates every question on a bounded pool; records keep question order.
pub fn run_benchmark(
    bundle: &DatasetBundle,
    blueprint: &RosterBlueprint,
    backend: Arc<dyn Reasoner>,
    settings: &RunSettings,
) -> Result<BenchmarkRun, RunError> {
    if let Some(dir) = &settings.trace_dir {
        std::fs::create_dir_all(dir).map_err(RunError::Traces)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let results: Vec<(EvalRecord, Option<EpisodeTrace>)> = pool.install(|| {
        bundle
            .questions
            .par_iter()
            .map(|q| evaluate_question(bundle, blueprint, &backend, settings, q))
            .collect()
    });
    let mut records = Vec::with_capacity(results.len());
    for (rec, trace) in results {
        if let (Some(dir), Some(t)) = (&settings.trace_dir, trace) {
            let path = dir.join(format!("{}.json", file_stem(&rec.question_id)));
            std::fs::write(path, t.to_json()).map_err(RunError::Traces)?;
        }
        records.push(rec);
    }
    let report = BenchmarkReport::from_records(
        &records,
        ReportMeta {
            condition: blueprint.condition.to_string(),
            n_agents: blueprint.n_agents,
            shots: settings.episode.shots,
            seed: settings.episode.seed,
            timing: settings.timing,
            config: settings.config_echo.clone(),
        },
    );
    Ok(BenchmarkRun { records, report })
}

//! Per-question evaluation records and the scores computed from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use segsql_core::orchestrator::{RewardReport, Termination};
use segsql_core::sql::{canonicalize, parse_sql, Difficulty};

/// Outcome of one question. Runtimes are in the unit of the run's timing
/// mode: VM steps or seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub db_id: String,
    pub condition: String,
    pub n_agents: usize,
    pub shots: usize,
    pub predicted_sql: Option<String>,
    pub gold_sql: String,
    pub exec_match: bool,
    pub exact_match: bool,
    /// The prediction executed without error.
    pub valid: bool,
    pub gold_runtime: f64,
    pub pred_runtime: f64,
    pub difficulty: Difficulty,
    pub rounds: usize,
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<RewardReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("score is undefined for an empty record set")]
    Empty,
}

const RATIO_MIN: f64 = 0.25;
const RATIO_MAX: f64 = 4.0;

/// Efficiency-weighted accuracy on a 0-100 scale:
/// `100/N * sum(match * sqrt(clip(gold / pred, 0.25, 4)))`.
pub fn ves(records: &[EvalRecord]) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let total: f64 = records
        .iter()
        .filter(|r| r.exec_match)
        .map(|r| {
            let ratio = if r.pred_runtime > 0.0 {
                r.gold_runtime / r.pred_runtime
            } else {
                RATIO_MAX
            };
            ratio.clamp(RATIO_MIN, RATIO_MAX).sqrt()
        })
        .sum();
    Ok(100.0 * total / records.len() as f64)
}

/// Percentage of records satisfying `pick`; `None` when there are none.
pub fn percentage(records: &[EvalRecord], pick: impl Fn(&EvalRecord) -> bool) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(100.0 * records.iter().filter(|r| pick(r)).count() as f64 / records.len() as f64)
}

/// Both queries parse and have the same canonical form.
pub fn exact_match(pred: &str, gold: &str) -> bool {
    match (parse_sql(pred), parse_sql(gold)) {
        (Ok(p), Ok(g)) => canonicalize(&p) == canonicalize(&g),
        _ => false,
    }
}

//! The episode loop and its reward accounting.
//!
//! Round `i` belongs to agent `t(i) = (i - 1) mod n`. In its round the
//! working agent
//!
//! 1. joins its private schema with the global schema, extracts what the
//!    question needs and merges that extraction (with retention padding)
//!    into the global schema;
//! 2. checks the candidate produced in round `i - 1`, against its latest
//!    known schema, and ends the episode if the verdict is positive;
//! 3. generates a new candidate from its extraction.
//!
//! The checker of round `i`'s candidate is therefore `n(i) = t(i + 1)`.
//! When the round budget runs out the last candidate stands as the answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    act_check, act_extract, act_generate, known_schema, AgentError, AgentProfile, CheckVerdict, Question,
    SqlCandidate, StrategyPolicy,
};
use crate::schema::{extract_subschema, merge_schemas, schema_match_score, Schema, SchemaRef, SchemaSelection};
use crate::sql::Finding;

/// Index of the agent working in `round` (1-based) among `n` agents.
pub fn select_working_agent(round: usize, n: usize) -> usize {
    assert!(round >= 1 && n >= 1, "rounds are 1-based and the roster is non-empty");
    (round - 1) % n
}

/// Index of the agent that checks the candidate produced in `round`.
pub fn select_checking_agent(round: usize, n: usize) -> usize {
    select_working_agent(round + 1, n)
}

/// Experimental condition an episode runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// One agent holding half of the tables.
    OnePart,
    /// One agent holding the whole schema.
    OneAll,
    /// Two agents splitting the tables evenly.
    TwoPart,
    /// Two agents each holding the whole schema.
    TwoAll,
    /// `n` agents splitting the tables evenly.
    Custom,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::OnePart,
        Condition::OneAll,
        Condition::TwoPart,
        Condition::TwoAll,
        Condition::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::OnePart => "OnePart",
            Condition::OneAll => "OneAll",
            Condition::TwoPart => "TwoPart",
            Condition::TwoAll => "TwoAll",
            Condition::Custom => "Custom",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str().to_lowercase() == key)
            .ok_or_else(|| format!("unknown condition `{s}` (expected OnePart, OneAll, TwoPart, TwoAll or Custom)"))
    }
}

/// Protocol features that can be switched off one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Pad extracted tables up to the retention floor.
    pub retention: bool,
    /// Share extractions through the global schema.
    pub exchange: bool,
    /// Let the next agent check each candidate.
    pub checking: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            retention: true,
            exchange: true,
            checking: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Round budget; `None` means two rounds per agent.
    pub max_rounds: Option<usize>,
    pub retention_floor: usize,
    pub strategy: StrategyPolicy,
    pub shots: usize,
    pub condition: Condition,
    pub ablations: Ablations,
    /// Backend calls allowed per action before the action counts as failed.
    pub attempts: usize,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_rounds: None,
            retention_floor: crate::schema::DEFAULT_RETENTION_FLOOR,
            strategy: StrategyPolicy::default(),
            shots: 0,
            condition: Condition::Custom,
            ablations: Ablations::default(),
            attempts: 1,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn rounds_for(&self, agents: usize) -> usize {
        self.max_rounds.unwrap_or(2 * agents).max(1)
    }

    fn effective_floor(&self) -> usize {
        if self.ablations.retention {
            self.retention_floor
        } else {
            0
        }
    }
}

/// Backend calls made in a round, per action kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub extract: u32,
    pub generate: u32,
    pub check: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub working_agent: String,
    pub global_before: Schema,
    pub global_after: Schema,
    pub extraction: SchemaSelection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Finding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_of_previous: Option<CheckVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<SqlCandidate>,
    pub actions: ActionCounts,
    /// Backend failures that exhausted their attempts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Accepted,
    BudgetExhausted,
    NoCandidate,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Accepted => "accepted",
            Termination::BudgetExhausted => "budget-exhausted",
            Termination::NoCandidate => "no-candidate",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything that happened while answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub question_id: String,
    pub db_id: String,
    pub agents: Vec<String>,
    pub max_rounds: usize,
    pub rounds: Vec<RoundRecord>,
    pub final_sql: Option<SqlCandidate>,
    pub termination: Termination,
    /// The checker whose positive verdict ended the episode. `None` for an
    /// acceptance without checking.
    pub accepted_by: Option<String>,
}

impl EpisodeTrace {
    /// Global schema at the end of the episode.
    pub fn final_global(&self) -> Option<&Schema> {
        self.rounds.last().map(|r| &r.global_after)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EpisodeError {
    #[error("the roster is empty")]
    EmptyRoster,
    #[error("agent `{agent}` holds database `{found}`, the question is about `{expected}`")]
    DatabaseMismatch {
        agent: String,
        expected: String,
        found: String,
    },
    #[error("agent id `{0}` appears twice in the roster")]
    DuplicateAgent(String),
}

fn validate_roster(question: &Question, roster: &[AgentProfile]) -> Result<(), EpisodeError> {
    if roster.is_empty() {
        return Err(EpisodeError::EmptyRoster);
    }
    for (i, a) in roster.iter().enumerate() {
        if roster[..i].iter().any(|b| b.agent_id == a.agent_id) {
            return Err(EpisodeError::DuplicateAgent(a.agent_id.clone()));
        }
        let p = &a.private_schema;
        if !p.is_empty() && !p.db_id().eq_ignore_ascii_case(&question.db_id) {
            return Err(EpisodeError::DatabaseMismatch {
                agent: a.agent_id.clone(),
                expected: question.db_id.clone(),
                found: p.db_id().to_string(),
            });
        }
    }
    Ok(())
}

fn with_attempts<T>(
    attempts: usize,
    count: &mut u32,
    failures: &mut Vec<String>,
    mut call: impl FnMut() -> Result<T, AgentError>,
) -> Option<T> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        *count += 1;
        match call() {
            Ok(v) => return Some(v),
            Err(e) => last = Some(e),
        }
    }
    if let Some(e) = last {
        failures.push(e.to_string());
    }
    None
}

/// Runs one question through the roster. Deterministic whenever the
/// backends are.
pub fn run_episode(
    question: &Question,
    roster: &[AgentProfile],
    config: &EpisodeConfig,
) -> Result<EpisodeTrace, EpisodeError> {
    validate_roster(question, roster)?;
    let n = roster.len();
    let max_rounds = config.rounds_for(n);
    let floor = config.effective_floor();

    let mut global = Schema::empty(question.db_id.clone());
    let mut rounds = Vec::with_capacity(max_rounds);
    let mut pending: Option<SqlCandidate> = None;
    let mut last_candidate: Option<SqlCandidate> = None;
    let mut accepted: Option<(SqlCandidate, Option<String>)> = None;

    for round in 1..=max_rounds {
        let agent = &roster[select_working_agent(round, n)];
        let mut actions = ActionCounts::default();
        let mut failures = Vec::new();
        let global_before = global.clone();

        let known = known_schema(agent, &global).expect("roster databases were validated");
        let extraction = with_attempts(config.attempts, &mut actions.extract, &mut failures, || {
            act_extract(agent, question, &known, round)
        });
        let (selection, warnings) = match extraction {
            Some(e) => (e.selection, e.warnings),
            None => (SchemaSelection::new(), Vec::new()),
        };
        let extracted = extract_subschema(&known, &selection, floor).expect("selection was sanitized against known");
        if config.ablations.exchange {
            global = merge_schemas(&global, &extracted).expect("same database");
        }

        let mut record = RoundRecord {
            round,
            working_agent: agent.agent_id.clone(),
            global_before,
            global_after: global.clone(),
            extraction: selection,
            warnings,
            check_of_previous: None,
            candidate: None,
            actions,
            failures,
        };

        if let Some(candidate) = pending.take() {
            let latest = known_schema(agent, &global).expect("same database");
            let verdict = with_attempts(config.attempts, &mut record.actions.check, &mut record.failures, || {
                act_check(agent, question, &candidate, &latest, round)
            })
            .unwrap_or_else(|| CheckVerdict {
                positive: false,
                reasons: vec![Finding::SemanticDoubt {
                    note: "the check could not be completed".to_string(),
                }],
                checked_by: agent.agent_id.clone(),
                round,
                candidate_round: candidate.round,
            });
            let positive = verdict.positive;
            record.check_of_previous = Some(verdict);
            if positive {
                accepted = Some((candidate, Some(agent.agent_id.clone())));
                rounds.push(record);
                break;
            }
        }

        if !extracted.is_empty() {
            let strategy = config.strategy.choose(question, &extracted);
            let candidate = with_attempts(config.attempts, &mut record.actions.generate, &mut record.failures, || {
                act_generate(agent, question, &extracted, strategy, config.shots, round)
            });
            if let Some(c) = candidate {
                record.candidate = Some(c.clone());
                last_candidate = Some(c.clone());
                if config.ablations.checking {
                    pending = Some(c);
                } else {
                    accepted = Some((c, None));
                    rounds.push(record);
                    break;
                }
            }
        }
        rounds.push(record);
    }

    let (final_sql, termination, accepted_by) = match accepted {
        Some((c, by)) => (Some(c), Termination::Accepted, by),
        None => match last_candidate {
            Some(c) => (Some(c), Termination::BudgetExhausted, None),
            None => (None, Termination::NoCandidate, None),
        },
    };
    Ok(EpisodeTrace {
        question_id: question.question_id.clone(),
        db_id: question.db_id.clone(),
        agents: roster.iter().map(|a| a.agent_id.clone()).collect(),
        max_rounds,
        rounds,
        final_sql,
        termination,
        accepted_by,
    })
}

/// Price of one call of each action kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionCosts {
    /// Extraction, which includes the merge into the global schema.
    pub extract: f64,
    pub generate: f64,
    pub check: f64,
}

impl ActionCosts {
    fn of(&self, a: &ActionCounts) -> f64 {
        self.extract * f64::from(a.extract) + self.generate * f64::from(a.generate) + self.check * f64::from(a.check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub costs: ActionCosts,
    pub lambda_e: f64,
    pub lambda_s: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            costs: ActionCosts::default(),
            lambda_e: 1.0,
            lambda_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub r_e: f64,
    pub r_s: f64,
    pub r: f64,
    /// `J_e(after) - J_e(before)` per round.
    pub je_deltas: Vec<f64>,
    /// Verdict delivered in each round: 1 positive, 0 negative or none.
    pub js_values: Vec<f64>,
}

/// Team rewards over a finished trace.
///
/// * schema reward: `R_e = sum_i [ -C(extract_i) + J_e(g_i) - J_e(g_{i-1}) ]`
///   with `J_e` the coverage of `gold_refs` by the global schema;
/// * SQL reward: over rounds that made an SQL action (generate or check),
///   `R_s = sum_i [ -C'(i) + J_s(i+1) - J_s(i) ]`, where `J_s(k)` is the
///   verdict delivered in round `k` (on round `k-1`'s candidate) and `C'(i)`
///   prices all of round `i`'s calls. After the last round `J_s` is the
///   verdict still standing: that round's verdict when it produced no new
///   candidate, else 0;
/// * `R = lambda_e * R_e + lambda_s * R_s`.
pub fn compute_rewards(trace: &EpisodeTrace, gold_refs: &[SchemaRef], config: &RewardConfig) -> RewardReport {
    let js = |r: &RoundRecord| match &r.check_of_previous {
        Some(v) if v.positive => 1.0,
        _ => 0.0,
    };
    let js_values: Vec<f64> = trace.rounds.iter().map(js).collect();
    let terminal = match trace.rounds.last() {
        Some(last) if last.candidate.is_none() => js(last),
        _ => 0.0,
    };

    let mut r_e = 0.0;
    let mut je_deltas = Vec::with_capacity(trace.rounds.len());
    for r in &trace.rounds {
        let delta = schema_match_score(&r.global_after, gold_refs) - schema_match_score(&r.global_before, gold_refs);
        je_deltas.push(delta);
        r_e += -config.costs.extract * f64::from(r.actions.extract) + delta;
    }

    let mut r_s = 0.0;
    for (i, r) in trace.rounds.iter().enumerate() {
        if r.actions.generate == 0 && r.actions.check == 0 {
            continue;
        }
        let next = js_values.get(i + 1).copied().unwrap_or(terminal);
        r_s += -config.costs.of(&r.actions) + next - js_values[i];
    }

    RewardReport {
        r_e,
        r_s,
        r: config.lambda_e * r_e + config.lambda_s * r_s,
        je_deltas,
        js_values,
    }
}

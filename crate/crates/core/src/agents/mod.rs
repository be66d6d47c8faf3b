//! Agents and the reasoners behind them.
//!
//! An agent owns a private schema fragment and a [`Reasoner`]. The reasoner
//! makes the judgment calls (which schema parts matter, what SQL answers the
//! question, whether a candidate is right); the `act_*` functions wrap those
//! calls with the mechanical guarantees the protocol relies on: selections
//! are sanitized against the known schema, and a candidate that does not
//! parse or resolve is never accepted.

mod cassette;
pub mod lexicon;
mod llm;
mod oracle;
pub mod prompt;
#[cfg(feature = "remote")]
mod remote;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{merge_schemas, Schema, SchemaError, SchemaRef, SchemaSelection};
use crate::sql::{parse_sql, referenced_identifiers, semantic_check, Difficulty, Finding, SqlError};

pub use cassette::{CassetteEntry, CassetteStore, RecordingTransport, ReplayTransport};
pub use llm::{
    parse_extraction, parse_sql_completion, parse_verdict, ChatMessage, ChatRequest, ChatTransport, ExchangeKey,
    LlmReasoner,
};
pub use oracle::OracleReasoner;
pub use prompt::{assemble_prompt, assemble_prompt_with, render_schema, FewShotBank, FewShotExample, PromptError};
#[cfg(feature = "remote")]
pub use remote::HttpTransport;

/// A natural-language question against one database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub db_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    /// Reference answer. Used for scoring and by the oracle; never put in a
    /// prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_label: Option<Difficulty>,
    /// Tables and columns the gold SQL touches, resolved against the full
    /// schema.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_refs: Vec<SchemaRef>,
}

impl Question {
    pub fn new(question_id: impl Into<String>, db_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            db_id: db_id.into(),
            text: text.into(),
            evidence: None,
            gold_sql: None,
            difficulty_label: None,
            gold_refs: Vec::new(),
        }
    }

    pub fn with_evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = Some(evidence.into());
        self
    }

    /// Attaches gold SQL and derives its references from `schema`.
    pub fn with_gold(mut self, sql: impl Into<String>, schema: &Schema) -> Result<Self, SqlError> {
        let sql = sql.into();
        let ast = parse_sql(&sql)?;
        self.gold_refs = referenced_identifiers(&ast, Some(schema)).schema_refs();
        self.gold_sql = Some(sql);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Direct,
    Decompose,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Direct => "direct",
            Strategy::Decompose => "decompose",
        })
    }
}

/// How the working agent picks a generation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum StrategyPolicy {
    Fixed { strategy: Strategy },
    /// Decompose when the question names at least `table_threshold` tables
    /// of the extracted schema, or runs longer than `long_question_words`.
    Heuristic {
        table_threshold: usize,
        long_question_words: usize,
    },
}

impl Default for StrategyPolicy {
    fn default() -> Self {
        StrategyPolicy::Heuristic {
            table_threshold: 3,
            long_question_words: 25,
        }
    }
}

impl StrategyPolicy {
    pub fn choose(&self, question: &Question, schema: &Schema) -> Strategy {
        match *self {
            StrategyPolicy::Fixed { strategy } => strategy,
            StrategyPolicy::Heuristic {
                table_threshold,
                long_question_words,
            } => {
                let words = question.text.split_whitespace().count();
                let qt = lexicon::tokens(&question.text);
                let tables = schema.table_names().filter(|t| lexicon::name_matches(&qt, t)).count();
                if tables >= table_threshold || words > long_question_words {
                    Strategy::Decompose
                } else {
                    Strategy::Direct
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Extract,
    GenerateDirect,
    GenerateDecompose,
    Check,
}

impl TaskKind {
    pub fn generate(strategy: Strategy) -> Self {
        match strategy {
            Strategy::Direct => TaskKind::GenerateDirect,
            Strategy::Decompose => TaskKind::GenerateDecompose,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Extract => "extract",
            TaskKind::GenerateDirect => "generate-direct",
            TaskKind::GenerateDecompose => "generate-decompose",
            TaskKind::Check => "check",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Who is acting, on what, when. Recorded exchanges are keyed by it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Turn {
    pub question_id: String,
    pub agent_id: String,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlCandidate {
    pub text: String,
    pub produced_by: String,
    pub round: usize,
    pub strategy: Strategy,
    pub shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub positive: bool,
    pub reasons: Vec<Finding>,
    pub checked_by: String,
    /// Round in which the check ran.
    pub round: usize,
    /// Round that produced the checked candidate.
    pub candidate_round: usize,
}

/// A reasoner's opinion on a candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub positive: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Remote,
    Replay,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Oracle => "oracle",
            BackendKind::Remote => "remote",
            BackendKind::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response ({message}): {raw}")]
    Malformed { raw: String, message: String },
    #[error("no SQL found in completion: {raw}")]
    NoSql { raw: String },
    #[error("no recorded exchange for {0}")]
    MissingRecording(String),
    #[error("cassette error: {0}")]
    Cassette(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// The judgment-making half of an agent.
///
/// Implementations must be safe to call from several episodes at once.
pub trait Reasoner: Send + Sync + fmt::Debug {
    fn kind(&self) -> BackendKind;

    /// Tables and columns of `known` relevant to the question. May name
    /// things outside `known`; callers sanitize.
    fn extract(&self, turn: &Turn, question: &Question, known: &Schema) -> Result<SchemaSelection, BackendError>;

    /// SQL text answering the question over `schema`.
    fn generate(
        &self,
        turn: &Turn,
        question: &Question,
        schema: &Schema,
        strategy: Strategy,
        shots: usize,
    ) -> Result<String, BackendError>;

    /// Semantic opinion on `candidate`, given the checker's known schema.
    fn judge(&self, turn: &Turn, question: &Question, candidate: &str, known: &Schema)
        -> Result<Judgment, BackendError>;
}

#[derive(Debug, Clone)]
pub struct AgentProfile {
    pub agent_id: String,
    pub private_schema: Schema,
    pub backend: Arc<dyn Reasoner>,
}

impl AgentProfile {
    pub fn new(agent_id: impl Into<String>, private_schema: Schema, backend: Arc<dyn Reasoner>) -> Self {
        Self {
            agent_id: agent_id.into(),
            private_schema,
            backend,
        }
    }

    fn turn(&self, question: &Question, round: usize) -> Turn {
        Turn {
            question_id: question.question_id.clone(),
            agent_id: self.agent_id.clone(),
            round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("schema extraction failed: {0}")]
    ExtractionFailed(BackendError),
    #[error("SQL generation failed: {0}")]
    GenerationFailed(BackendError),
    #[error("completion contains no SQL: {raw}")]
    UnparseableCompletion { raw: String },
    #[error("SQL check failed: {0}")]
    CheckFailed(BackendError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// A sanitized extraction plus notes on what was dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub selection: SchemaSelection,
    pub warnings: Vec<Finding>,
}

/// The agent's view: its private schema joined with the global schema.
pub fn known_schema(agent: &AgentProfile, global: &Schema) -> Result<Schema, SchemaError> {
    merge_schemas(&agent.private_schema, global)
}

/// Asks the backend which parts of `known` matter. Identifiers the backend
/// invents are dropped and reported as warnings.
pub fn act_extract(
    agent: &AgentProfile,
    question: &Question,
    known: &Schema,
    round: usize,
) -> Result<Extraction, AgentError> {
    if known.is_empty() {
        return Ok(Extraction {
            selection: SchemaSelection::new(),
            warnings: Vec::new(),
        });
    }
    let raw = agent
        .backend
        .extract(&agent.turn(question, round), question, known)
        .map_err(AgentError::ExtractionFailed)?;
    let (selection, dropped) = raw.sanitized(known);
    let warnings = dropped
        .into_iter()
        .map(|r| {
            tracing::warn!(agent = %agent.agent_id, question = %question.question_id, reference = %r,
                "dropping unknown identifier from extraction");
            Finding::HallucinatedIdentifier { reference: r.to_string() }
        })
        .collect();
    Ok(Extraction { selection, warnings })
}

pub fn act_generate(
    agent: &AgentProfile,
    question: &Question,
    extracted: &Schema,
    strategy: Strategy,
    shots: usize,
    round: usize,
) -> Result<SqlCandidate, AgentError> {
    let text = agent
        .backend
        .generate(&agent.turn(question, round), question, extracted, strategy, shots)
        .map_err(|e| match e {
            BackendError::NoSql { raw } => AgentError::UnparseableCompletion { raw },
            other => AgentError::GenerationFailed(other),
        })?;
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(AgentError::UnparseableCompletion { raw: text });
    }
    Ok(SqlCandidate {
        text,
        produced_by: agent.agent_id.clone(),
        round,
        strategy,
        shots,
    })
}

/// Checks `candidate` against the checker's known schema. A candidate that
/// fails to parse or resolve is rejected without consulting the backend.
pub fn act_check(
    agent: &AgentProfile,
    question: &Question,
    candidate: &SqlCandidate,
    known: &Schema,
    round: usize,
) -> Result<CheckVerdict, AgentError> {
    let verdict = |positive, reasons| CheckVerdict {
        positive,
        reasons,
        checked_by: agent.agent_id.clone(),
        round,
        candidate_round: candidate.round,
    };
    let ast = match parse_sql(&candidate.text) {
        Ok(ast) => ast,
        Err(e) => return Ok(verdict(false, vec![Finding::ParseFailure { message: e.to_string() }])),
    };
    let findings: Vec<Finding> = semantic_check(&ast, known).into_iter().filter(Finding::is_blocking).collect();
    if !findings.is_empty() {
        return Ok(verdict(false, findings));
    }
    let judgment = agent
        .backend
        .judge(&agent.turn(question, round), question, &candidate.text, known)
        .map_err(AgentError::CheckFailed)?;
    if judgment.positive {
        Ok(verdict(true, Vec::new()))
    } else {
        let note = judgment.note.unwrap_or_else(|| "checker rejected the candidate".to_string());
        Ok(verdict(false, vec![Finding::SemanticDoubt { note }]))
    }
}

/// Which reasoner to build, with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Oracle {
        /// Share of gold references the extraction step can see, in (0, 1].
        #[serde(default = "full_recall")]
        recall: f64,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        temperature: f64,
        /// Environment variable holding the API key.
        #[serde(default = "default_key_var")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        /// Minimum spacing between requests, in seconds.
        #[serde(default)]
        min_interval_secs: f64,
        /// Cassette to append every exchange to.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<PathBuf>,
    },
    Replay {
        cassette: PathBuf,
        #[serde(default)]
        model: String,
        #[serde(default)]
        temperature: f64,
    },
}

fn full_recall() -> f64 {
    1.0
}

fn default_key_var() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_timeout() -> f64 {
    60.0
}

impl BackendSpec {
    pub fn oracle() -> Self {
        BackendSpec::Oracle { recall: 1.0 }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSpec::Oracle { .. } => BackendKind::Oracle,
            BackendSpec::Remote { .. } => BackendKind::Remote,
            BackendSpec::Replay { .. } => BackendKind::Replay,
        }
    }
}

/// Builds the reasoner described by `spec`. One reasoner is shared by all
/// agents of a run.
pub fn build_backend(spec: &BackendSpec) -> Result<Arc<dyn Reasoner>, BackendError> {
    match spec {
        BackendSpec::Oracle { recall } => {
            if !(*recall > 0.0 && *recall <= 1.0) {
                return Err(BackendError::Config(format!("oracle recall must be in (0, 1], got {recall}")));
            }
            Ok(Arc::new(OracleReasoner::with_recall(*recall)))
        }
        BackendSpec::Replay {
            cassette,
            model,
            temperature,
        } => {
            let store = CassetteStore::open_existing(cassette)?;
            let transport = Arc::new(ReplayTransport::new(Arc::new(store)));
            Ok(Arc::new(LlmReasoner::new(transport, model.clone(), *temperature, BackendKind::Replay)))
        }
        #[cfg(feature = "remote")]
        BackendSpec::Remote {
            endpoint,
            model,
            temperature,
            api_key_env,
            timeout_secs,
            min_interval_secs,
            record,
        } => {
            let key = std::env::var(api_key_env)
                .map_err(|_| BackendError::Config(format!("environment variable {api_key_env} is not set")))?;
            let http = HttpTransport::new(
                endpoint,
                key,
                std::time::Duration::from_secs_f64(*timeout_secs),
                std::time::Duration::from_secs_f64(*min_interval_secs),
            )?;
            let transport: Arc<dyn ChatTransport> = match record {
                Some(path) => Arc::new(RecordingTransport::new(Arc::new(http), Arc::new(CassetteStore::open(path)?))),
                None => Arc::new(http),
            };
            Ok(Arc::new(LlmReasoner::new(transport, model.clone(), *temperature, BackendKind::Remote)))
        }
        #[cfg(not(feature = "remote"))]
        BackendSpec::Remote { .. } => Err(BackendError::Config(
            "this build has no remote backend support".to_string(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::SchemaRef;

    #[derive(Debug)]
    struct Scripted {
        selection: Vec<SchemaRef>,
        sql: String,
        positive: bool,
    }

    impl Reasoner for Scripted {
        fn kind(&self) -> BackendKind {
            BackendKind::Replay
        }

        fn extract(&self, _: &Turn, _: &Question, _: &Schema) -> Result<SchemaSelection, BackendError> {
            let mut sel = SchemaSelection::new();
            for r in &self.selection {
                sel.add_ref(r);
            }
            Ok(sel)
        }

        fn generate(&self, _: &Turn, _: &Question, _: &Schema, _: Strategy, _: usize) -> Result<String, BackendError> {
            Ok(self.sql.clone())
        }

        fn judge(&self, _: &Turn, _: &Question, _: &str, _: &Schema) -> Result<Judgment, BackendError> {
            Ok(Judgment {
                positive: self.positive,
                note: None,
            })
        }
    }

    fn agent(private: Schema, backend: Scripted) -> AgentProfile {
        AgentProfile::new("a0", private, Arc::new(backend))
    }

    fn scripted(sql: &str, positive: bool) -> Scripted {
        Scripted {
            selection: vec![SchemaRef::column("emp", "id"), SchemaRef::column("ghost", "x"), SchemaRef::column("emp", "salary")],
            sql: sql.to_string(),
            positive,
        }
    }

    fn emp() -> Schema {
        Schema::builder("company").table("emp", &["id", "name"]).build().unwrap()
    }

    fn question() -> Question {
        Question::new("q1", "company", "How many employees are there?")
    }

    #[test]
    fn known_schema_is_private_joined_with_global() {
        let a = agent(emp(), scripted("SELECT 1", true));
        assert_eq!(known_schema(&a, &Schema::empty("company")).unwrap(), emp());
        let dept = Schema::builder("company").table("dept", &["id"]).build().unwrap();
        let k = known_schema(&a, &dept).unwrap();
        assert!(k.contains_table("emp") && k.contains_table("dept"));
        let empty = AgentProfile::new("a1", Schema::empty("company"), Arc::new(scripted("SELECT 1", true)));
        assert_eq!(known_schema(&empty, &emp()).unwrap(), emp());
    }

    #[test]
    fn extraction_drops_hallucinations() {
        let a = agent(emp(), scripted("SELECT 1", true));
        let ex = act_extract(&a, &question(), &emp(), 1).unwrap();
        assert!(ex.selection.validate_against(&emp()).is_ok());
        assert!(ex.selection.contains(&SchemaRef::column("emp", "id")));
        assert_eq!(ex.warnings.len(), 2);
        assert!(ex.warnings.iter().all(|w| !w.is_blocking()));
    }

    #[test]
    fn mechanical_screen_dominates_backend() {
        let a = agent(emp(), scripted("SELECT 1", true));
        let cand = SqlCandidate {
            text: "SELECT title FROM dept".into(),
            produced_by: "a1".into(),
            round: 1,
            strategy: Strategy::Direct,
            shots: 0,
        };
        let v = act_check(&a, &question(), &cand, &emp(), 2).unwrap();
        assert!(!v.positive);
        assert_eq!(v.reasons, vec![Finding::MissingTable { table: "dept".into() }]);
        assert_eq!((v.round, v.candidate_round), (2, 1));

        let bad = SqlCandidate {
            text: "SELEC id FROM emp".into(),
            ..cand.clone()
        };
        let v = act_check(&a, &question(), &bad, &emp(), 2).unwrap();
        assert!(matches!(v.reasons.as_slice(), [Finding::ParseFailure { .. }]));
    }

    #[test]
    fn backend_opinion_decides_clean_candidates() {
        let cand = SqlCandidate {
            text: "SELECT count(*) FROM emp".into(),
            produced_by: "a0".into(),
            round: 1,
            strategy: Strategy::Direct,
            shots: 0,
        };
        let yes = act_check(&agent(emp(), scripted("", true)), &question(), &cand, &emp(), 2).unwrap();
        assert!(yes.positive && yes.reasons.is_empty());
        let no = act_check(&agent(emp(), scripted("", false)), &question(), &cand, &emp(), 2).unwrap();
        assert!(!no.positive);
        assert!(matches!(no.reasons.as_slice(), [Finding::SemanticDoubt { .. }]));
    }

    #[test]
    fn empty_completion_is_unparseable() {
        let a = agent(emp(), scripted("  ", true));
        assert!(matches!(
            act_generate(&a, &question(), &emp(), Strategy::Direct, 0, 1),
            Err(AgentError::UnparseableCompletion { .. })
        ));
    }

    #[test]
    fn heuristic_strategy() {
        let s = Schema::builder("db")
            .table("singer", &["id"])
            .table("concert", &["id"])
            .table("stadium", &["id"])
            .build()
            .unwrap();
        let p = StrategyPolicy::default();
        assert_eq!(p.choose(&Question::new("q", "db", "How many singers?"), &s), Strategy::Direct);
        assert_eq!(
            p.choose(&Question::new("q", "db", "Which singers sang at a concert in each stadium?"), &s),
            Strategy::Decompose
        );
        let fixed = StrategyPolicy::Fixed {
            strategy: Strategy::Decompose,
        };
        assert_eq!(fixed.choose(&Question::new("q", "db", "How many singers?"), &s), Strategy::Decompose);
    }

    #[test]
    fn gold_refs_come_from_full_schema() {
        let q = question().with_gold("SELECT count(*) FROM emp", &emp()).unwrap();
        assert_eq!(q.gold_refs, vec![SchemaRef::table("emp")]);
    }

    #[test]
    fn backend_spec_json() {
        let spec: BackendSpec = serde_json::from_str(r#"{"kind":"oracle","recall":0.8}"#).unwrap();
        assert_eq!(spec, BackendSpec::Oracle { recall: 0.8 });
        assert!(build_backend(&BackendSpec::Oracle { recall: 0.0 }).is_err());
        let missing = BackendSpec::Replay {
            cassette: "/nonexistent/cassette.jsonl".into(),
            model: String::new(),
            temperature: 0.0,
        };
        assert!(build_backend(&missing).is_err());
    }
}

//! Prompt assembly for the four agent functions.
//!
//! A prompt is a fixed instruction header for the task, the schema rendered
//! as `CREATE TABLE` statements with key annotations, the requested number
//! of worked examples from the few-shot bank, then the question (and
//! evidence, and the candidate SQL when checking). Output is byte-stable for
//! fixed inputs.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Question, TaskKind};
use crate::schema::Schema;
use crate::sql::{parse_sql, referenced_identifiers};

const BUILTIN_BANK: &str = include_str!("../../assets/few_shot_bank.json");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("requested {requested} examples but the few-shot bank holds {available}")]
    InsufficientExamples { requested: usize, available: usize },
    #[error("a check prompt needs the candidate SQL")]
    MissingCandidate,
    #[error("few-shot bank is malformed: {0}")]
    BadBank(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub schema: Schema,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    pub sql: String,
    #[serde(default)]
    pub sub_questions: Vec<String>,
}

/// Versioned worked examples of (schema, question, SQL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotBank {
    pub version: String,
    pub examples: Vec<FewShotExample>,
}

impl FewShotBank {
    /// The bank shipped with the crate.
    pub fn builtin() -> &'static FewShotBank {
        static BANK: OnceLock<FewShotBank> = OnceLock::new();
        BANK.get_or_init(|| FewShotBank::from_json(BUILTIN_BANK).expect("builtin few-shot bank parses"))
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let bank: FewShotBank = serde_json::from_str(text).map_err(|e| PromptError::BadBank(e.to_string()))?;
        for ex in &bank.examples {
            parse_sql(&ex.sql).map_err(|e| PromptError::BadBank(format!("{}: {e}", ex.sql)))?;
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Renders a schema as `CREATE TABLE` statements with primary and foreign
/// key annotations.
pub fn render_schema(schema: &Schema) -> String {
    let mut out = String::new();
    for t in schema.tables() {
        let _ = writeln!(out, "CREATE TABLE {} (", t.name());
        let mut lines: Vec<String> = t
            .columns()
            .iter()
            .map(|c| {
                let mut line = format!("  {} {}", c.name, c.column_type.as_str());
                if t.primary_key().len() == 1 && t.is_primary_key(&c.name) {
                    line.push_str(" PRIMARY KEY");
                }
                line
            })
            .collect();
        if t.primary_key().len() > 1 {
            lines.push(format!("  PRIMARY KEY ({})", t.primary_key().join(", ")));
        }
        for k in schema.foreign_keys() {
            if k.from.table_name.eq_ignore_ascii_case(t.name()) {
                lines.push(format!(
                    "  FOREIGN KEY ({}) REFERENCES {}({})",
                    k.from.column_name, k.to.table_name, k.to.column_name
                ));
            }
        }
        out.push_str(&lines.join(",\n"));
        out.push_str("\n);\n");
    }
    out
}

fn header(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Extract => {
            "### Task: schema extraction\n\
             Select the tables and columns of the schema below that are needed to answer the question.\n\
             Answer with one `table.column` per line. Write `table.*` for a table that is needed without specific columns.\n"
        }
        TaskKind::GenerateDirect => {
            "### Task: SQL generation\n\
             Write one SQLite SELECT query that answers the question using only the schema below.\n\
             Answer with the query inside a ```sql fenced block.\n"
        }
        TaskKind::GenerateDecompose => {
            "### Task: SQL generation by decomposition\n\
             First break the question into simpler sub-questions and solve them in order, \
             then write one SQLite SELECT query that answers the original question using only the schema below.\n\
             Answer with the sub-questions as a numbered list, then the final query inside a ```sql fenced block.\n"
        }
        TaskKind::Check => {
            "### Task: SQL checking\n\
             Decide whether the candidate SQL is syntactically valid and correctly answers the question \
             given the schema below.\n\
             Answer with `VERDICT: CORRECT` or `VERDICT: INCORRECT` followed by a one-line reason.\n"
        }
    }
}

fn example_block(out: &mut String, kind: TaskKind, index: usize, ex: &FewShotExample) {
    let _ = writeln!(out, "### Example {}", index + 1);
    out.push_str("Schema:\n");
    out.push_str(&render_schema(&ex.schema));
    let _ = writeln!(out, "Question: {}", ex.question);
    if let Some(ev) = &ex.evidence {
        let _ = writeln!(out, "Evidence: {ev}");
    }
    match kind {
        TaskKind::Extract => {
            out.push_str("Answer:\n");
            if let Ok(ast) = parse_sql(&ex.sql) {
                let refs = referenced_identifiers(&ast, Some(&ex.schema));
                for t in &refs.tables {
                    if !refs.columns.iter().any(|c| c.table_name.eq_ignore_ascii_case(t)) {
                        let _ = writeln!(out, "{t}.*");
                    }
                }
                for c in &refs.columns {
                    let _ = writeln!(out, "{c}");
                }
            }
        }
        TaskKind::GenerateDirect => {
            let _ = writeln!(out, "Answer:\n```sql\n{}\n```", ex.sql);
        }
        TaskKind::GenerateDecompose => {
            out.push_str("Answer:\n");
            for (i, q) in ex.sub_questions.iter().enumerate() {
                let _ = writeln!(out, "{}. {q}", i + 1);
            }
            let _ = writeln!(out, "```sql\n{}\n```", ex.sql);
        }
        TaskKind::Check => {
            let _ = writeln!(
                out,
                "Candidate SQL: {}\nAnswer: VERDICT: CORRECT - the query answers the question.",
                ex.sql
            );
        }
    }
    out.push('\n');
}

/// Builds the prompt text for one agent function using `bank` for examples.
pub fn assemble_prompt_with(
    bank: &FewShotBank,
    kind: TaskKind,
    question: &Question,
    schema: &Schema,
    shots: usize,
    candidate: Option<&str>,
) -> Result<String, PromptError> {
    if shots > bank.len() {
        return Err(PromptError::InsufficientExamples {
            requested: shots,
            available: bank.len(),
        });
    }
    if kind == TaskKind::Check && candidate.is_none() {
        return Err(PromptError::MissingCandidate);
    }
    let mut out = String::new();
    out.push_str(header(kind));
    out.push('\n');
    for (i, ex) in bank.examples.iter().take(shots).enumerate() {
        example_block(&mut out, kind, i, ex);
    }
    out.push_str("### Database schema\n");
    out.push_str(&render_schema(schema));
    out.push('\n');
    let _ = writeln!(out, "### Question\n{}", question.text);
    if let Some(ev) = question.evidence.as_deref().filter(|e| !e.trim().is_empty()) {
        let _ = writeln!(out, "### Evidence\n{ev}");
    }
    if let (TaskKind::Check, Some(sql)) = (kind, candidate) {
        let _ = writeln!(out, "### Candidate SQL\n{sql}");
    }
    Ok(out)
}

/// [`assemble_prompt_with`] over the builtin few-shot bank.
pub fn assemble_prompt(
    kind: TaskKind,
    question: &Question,
    schema: &Schema,
    shots: usize,
    candidate: Option<&str>,
) -> Result<String, PromptError> {
    assemble_prompt_with(FewShotBank::builtin(), kind, question, schema, shots, candidate)
}

//! A reasoner that prompts a chat-completion model.
//!
//! The model sees the prompts from [`super::prompt`]; its replies are parsed
//! back into selections, SQL text and verdicts. Transport is pluggable so the
//! same reasoner runs live, records, or replays.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::assemble_prompt;
use super::{BackendError, BackendKind, Judgment, Question, Reasoner, Strategy, TaskKind, Turn};
use crate::schema::{Schema, SchemaSelection};

const SYSTEM_PROMPT: &str = "You are an expert SQLite developer working with a partial view of a database schema. \
Follow the answer format exactly.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// The body of an OpenAI-style chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Hex SHA-256 of the serialized message list.
    pub fn prompt_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.messages).expect("messages serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Identity of one model exchange; cassettes are keyed by it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExchangeKey {
    pub question_id: String,
    pub agent_id: String,
    pub round: usize,
    pub task_kind: TaskKind,
    pub prompt_hash: String,
}

impl fmt::Display for ExchangeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/round {}/{}/{}",
            self.question_id,
            self.agent_id,
            self.round,
            self.task_kind,
            &self.prompt_hash[..self.prompt_hash.len().min(12)]
        )
    }
}

/// Delivers a chat request and returns the assistant's reply text.
pub trait ChatTransport: Send + Sync + fmt::Debug {
    fn send(&self, key: &ExchangeKey, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone)]
pub struct LlmReasoner {
    transport: Arc<dyn ChatTransport>,
    model: String,
    temperature: f64,
    kind: BackendKind,
}

impl LlmReasoner {
    pub fn new(transport: Arc<dyn ChatTransport>, model: impl Into<String>, temperature: f64, kind: BackendKind) -> Self {
        Self {
            transport,
            model: model.into(),
            temperature,
            kind,
        }
    }

    fn ask(&self, turn: &Turn, kind: TaskKind, prompt: String) -> Result<String, BackendError> {
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: SYSTEM_PROMPT.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt,
                },
            ],
            temperature: self.temperature,
        };
        let key = ExchangeKey {
            question_id: turn.question_id.clone(),
            agent_id: turn.agent_id.clone(),
            round: turn.round,
            task_kind: kind,
            prompt_hash: request.prompt_hash(),
        };
        self.transport.send(&key, &request)
    }
}

fn prompt_error(e: super::PromptError) -> BackendError {
    BackendError::Config(e.to_string())
}

impl Reasoner for LlmReasoner {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn extract(&self, turn: &Turn, question: &Question, known: &Schema) -> Result<SchemaSelection, BackendError> {
        let prompt = assemble_prompt(TaskKind::Extract, question, known, 0, None).map_err(prompt_error)?;
        let raw = self.ask(turn, TaskKind::Extract, prompt)?;
        parse_extraction(&raw)
    }

    fn generate(
        &self,
        turn: &Turn,
        question: &Question,
        schema: &Schema,
        strategy: Strategy,
        shots: usize,
    ) -> Result<String, BackendError> {
        let kind = TaskKind::generate(strategy);
        let prompt = assemble_prompt(kind, question, schema, shots, None).map_err(prompt_error)?;
        let raw = self.ask(turn, kind, prompt)?;
        parse_sql_completion(&raw)
    }

    fn judge(
        &self,
        turn: &Turn,
        question: &Question,
        candidate: &str,
        known: &Schema,
    ) -> Result<Judgment, BackendError> {
        let prompt = assemble_prompt(TaskKind::Check, question, known, 0, Some(candidate)).map_err(prompt_error)?;
        let raw = self.ask(turn, TaskKind::Check, prompt)?;
        parse_verdict(&raw)
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_')
}

fn clean_token(s: &str) -> &str {
    s.trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | ',' | ';' | '[' | ']'))
}

/// Reads a selection from a reply: `table.column` / `table.*` lines, or a
/// JSON object mapping table names to column lists.
pub fn parse_extraction(raw: &str) -> Result<SchemaSelection, BackendError> {
    let mut sel = SchemaSelection::new();
    let mut found = false;
    for line in raw.lines() {
        let line = line.trim().trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c.is_ascii_digit() || c == '.' || c == ')');
        let Some(word) = line.split_whitespace().next() else {
            continue;
        };
        let word = clean_token(word);
        let Some((table, column)) = word.split_once('.') else {
            continue;
        };
        let (table, column) = (clean_token(table), clean_token(column));
        if !is_ident(table) {
            continue;
        }
        if column == "*" {
            sel.add_table(table);
            found = true;
        } else if is_ident(column) {
            sel.add_column(table, column);
            found = true;
        }
    }
    if found {
        return Ok(sel);
    }
    if let (Some(start), Some(end)) = (raw.find('{'), raw.rfind('}')) {
        if start < end {
            if let Ok(map) = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&raw[start..=end]) {
                for (table, cols) in map {
                    sel.add_table(&table);
                    for c in cols.as_array().into_iter().flatten().filter_map(|c| c.as_str()) {
                        if c != "*" {
                            sel.add_column(&table, c);
                        }
                    }
                }
                return Ok(sel);
            }
        }
    }
    if raw.trim().eq_ignore_ascii_case("none") {
        return Ok(sel);
    }
    Err(BackendError::Malformed {
        raw: raw.to_string(),
        message: "expected `table.column` lines".to_string(),
    })
}

/// Pulls the SQL out of a reply: the first fenced block, else the text from
/// the first line starting with SELECT or WITH.
pub fn parse_sql_completion(raw: &str) -> Result<String, BackendError> {
    if let Some(start) = raw.find("```") {
        let body = &raw[start + 3..];
        let body = body.strip_prefix("sql").or_else(|| body.strip_prefix("SQL")).unwrap_or(body);
        if let Some(end) = body.find("```") {
            let sql = body[..end].trim().trim_end_matches(';').trim();
            if !sql.is_empty() {
                return Ok(sql.to_string());
            }
        }
    }
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let head = line.trim_start().to_ascii_uppercase();
        if head.starts_with("SELECT") || head.starts_with("WITH") {
            let sql = raw[offset..].trim().trim_end_matches(';').trim();
            return Ok(sql.to_string());
        }
        offset += line.len();
    }
    Err(BackendError::NoSql { raw: raw.to_string() })
}

/// Reads `VERDICT: CORRECT` / `VERDICT: INCORRECT` and the reason after it.
pub fn parse_verdict(raw: &str) -> Result<Judgment, BackendError> {
    let upper = raw.to_ascii_uppercase();
    let Some(pos) = upper.find("VERDICT:") else {
        return Err(BackendError::Malformed {
            raw: raw.to_string(),
            message: "no VERDICT line".to_string(),
        });
    };
    let rest = raw[pos + "VERDICT:".len()..].trim_start();
    let word: String = rest.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let positive = match word.to_ascii_uppercase().as_str() {
        "CORRECT" => true,
        "INCORRECT" => false,
        _ => {
            return Err(BackendError::Malformed {
                raw: raw.to_string(),
                message: "verdict is neither CORRECT nor INCORRECT".to_string(),
            })
        }
    };
    let note = rest[word.len()..]
        .lines()
        .next()
        .map(|l| l.trim_start_matches(|c: char| c == '-' || c == ':' || c.is_whitespace()).trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string);
    Ok(Judgment { positive, note })
}

//! Browser bindings for a few schema and episode operations.
//!
//! Schemas are written one table per line, `name: col1, col2, ...`, with the
//! first column as primary key. Foreign keys are lines of the form
//! `table.col -> table.col`.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use segsql_core::agents::{render_schema, AgentProfile, OracleReasoner, Question, Reasoner};
use segsql_core::orchestrator::{compute_rewards, run_episode, Condition, EpisodeConfig, RewardConfig};
use segsql_core::schema::{extract_subschema, merge_schemas, partition_schema, PartitionMode, Schema, SchemaSelection};

const DB_ID: &str = "demo";

fn split_ref(s: &str) -> Result<(&str, &str), String> {
    s.trim()
        .split_once('.')
        .map(|(t, c)| (t.trim(), c.trim()))
        .ok_or_else(|| format!("expected table.column, got `{}`", s.trim()))
}

pub fn parse_schema(text: &str) -> Result<Schema, String> {
    let mut tables: Vec<(String, Vec<String>)> = Vec::new();
    let mut keys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((from, to)) = line.split_once("->") {
            keys.push((split_ref(from)?, split_ref(to)?));
        } else if let Some((name, cols)) = line.split_once(':') {
            let cols: Vec<String> = cols.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
            if cols.is_empty() {
                return Err(format!("line {}: table `{}` has no columns", i + 1, name.trim()));
            }
            tables.push((name.trim().to_string(), cols));
        } else {
            return Err(format!("line {}: expected `table: columns` or `a.b -> c.d`", i + 1));
        }
    }
    let mut b = Schema::builder(DB_ID);
    for (name, cols) in &tables {
        let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
        b = b.table(name, &cols).primary_key(&cols[..1]);
    }
    for (from, to) in keys {
        b = b.foreign_key(from, to);
    }
    b.build().map_err(|e| e.to_string())
}

/// Parses `table`, `table.*` and `table.column` items separated by commas,
/// spaces or newlines.
pub fn parse_selection(text: &str, schema: &Schema) -> Result<SchemaSelection, String> {
    let mut sel = SchemaSelection::new();
    for item in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
        match item.split_once('.') {
            None => {
                sel.add_table(item);
            }
            Some((t, "*")) => {
                let table = schema.table(t).ok_or_else(|| format!("unknown table `{t}`"))?;
                for c in table.columns() {
                    sel.add_column(t, &c.name);
                }
            }
            Some((t, c)) => sel.add_column(t, c),
        }
    }
    Ok(sel)
}

pub fn partition_text(schema_text: &str, parts: usize, seed: u64) -> Result<String, String> {
    let schema = parse_schema(schema_text)?;
    let split = partition_schema(&schema, parts, PartitionMode::EqualSplit, seed).map_err(|e| e.to_string())?;
    Ok(split
        .iter()
        .enumerate()
        .map(|(i, p)| format!("agent-{i}: {}\n", p.table_names().collect::<Vec<_>>().join(", ")))
        .collect())
}

pub fn extract_merge_text(schema_text: &str, first: &str, second: &str, delta: usize) -> Result<String, String> {
    let schema = parse_schema(schema_text)?;
    let cut = |text: &str| {
        let sel = parse_selection(text, &schema)?;
        extract_subschema(&schema, &sel, delta).map_err(|e| e.to_string())
    };
    let (a, b) = (cut(first)?, cut(second)?);
    let merged = merge_schemas(&a, &b).map_err(|e| e.to_string())?;
    Ok(format!(
        "-- first extraction\n{}\n-- second extraction\n{}\n-- merged\n{}",
        render_schema(&a),
        render_schema(&b),
        render_schema(&merged)
    ))
}

pub fn episode_json(
    schema_text: &str,
    question: &str,
    gold_sql: &str,
    agents: usize,
    recall: f64,
    seed: u64,
) -> Result<String, String> {
    let schema = parse_schema(schema_text)?;
    let q = Question::new("demo-1", DB_ID, question)
        .with_gold(gold_sql, &schema)
        .map_err(|e| e.to_string())?;
    let parts = partition_schema(&schema, agents, PartitionMode::EqualSplit, seed).map_err(|e| e.to_string())?;
    let backend: Arc<dyn Reasoner> = Arc::new(OracleReasoner::with_recall(recall));
    let roster: Vec<AgentProfile> = parts
        .into_iter()
        .enumerate()
        .map(|(i, p)| AgentProfile::new(format!("agent-{i}"), p, backend.clone()))
        .collect();
    let config = EpisodeConfig {
        condition: Condition::Custom,
        seed,
        ..EpisodeConfig::default()
    };
    let trace = run_episode(&q, &roster, &config).map_err(|e| e.to_string())?;
    let rewards = compute_rewards(&trace, &q.gold_refs, &RewardConfig::default());
    let out = serde_json::json!({ "trace": trace, "rewards": rewards });
    serde_json::to_string_pretty(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn partition(schema_text: &str, parts: usize, seed: u32) -> Result<String, String> {
    partition_text(schema_text, parts, u64::from(seed))
}

#[wasm_bindgen]
pub fn extract_merge(schema_text: &str, first: &str, second: &str, delta: usize) -> Result<String, String> {
    extract_merge_text(schema_text, first, second, delta)
}

#[wasm_bindgen]
pub fn episode(
    schema_text: &str,
    question: &str,
    gold_sql: &str,
    agents: usize,
    recall: f64,
    seed: u32,
) -> Result<String, String> {
    episode_json(schema_text, question, gold_sql, agents, recall, u64::from(seed))
}

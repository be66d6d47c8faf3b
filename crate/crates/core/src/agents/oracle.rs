//! A deterministic, gold-aware stand-in for a capable language model.
//!
//! * extract: tables whose name shares a word stem with the question (plus
//!   their matching columns), joined with the gold references present in
//!   the known schema. A selected table with no selected column gets its
//!   primary key, or its first column.
//! * generate: the gold SQL when every gold reference is in the schema it is
//!   given, otherwise `SELECT <columns> FROM <first table>`.
//! * judge: positive when the candidate canonicalizes to the same text as
//!   the gold SQL (or when there is no gold SQL).
//!
//! With `recall < 1` the oracle has a blind spot: each gold reference of a
//! question is hidden from every extraction with probability `1 - recall`,
//! decided by a hash of the question id and the reference. Hidden references
//! are removed from the selection after the rules above run, so only
//! retention padding can bring them back.

use sha2::{Digest, Sha256};

use super::lexicon::{name_matches, tokens};
use super::{BackendError, BackendKind, Judgment, Question, Reasoner, Strategy, Turn};
use crate::schema::{Schema, SchemaRef, SchemaSelection};
use crate::sql::{canonicalize, parse_sql};

#[derive(Debug, Clone)]
pub struct OracleReasoner {
    recall: f64,
}

impl Default for OracleReasoner {
    fn default() -> Self {
        Self { recall: 1.0 }
    }
}

impl OracleReasoner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_recall(recall: f64) -> Self {
        Self {
            recall: recall.clamp(0.0, 1.0),
        }
    }

    pub fn recall(&self) -> f64 {
        self.recall
    }

    fn hidden(&self, question: &Question, r: &SchemaRef) -> bool {
        if self.recall >= 1.0 {
            return false;
        }
        let digest = Sha256::new()
            .chain_update(question.question_id.as_bytes())
            .chain_update([0u8])
            .chain_update(r.to_string().to_lowercase().as_bytes())
            .finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        let draw = u64::from_be_bytes(head) as f64 / (u64::MAX as f64 + 1.0);
        draw >= self.recall
    }
}

fn fallback_sql(schema: &Schema) -> Option<String> {
    let t = schema.tables().first()?;
    let cols: Vec<&str> = t.columns().iter().map(|c| c.name.as_str()).collect();
    Some(format!("SELECT {} FROM {}", cols.join(", "), t.name()))
}

impl Reasoner for OracleReasoner {
    fn kind(&self) -> BackendKind {
        BackendKind::Oracle
    }

    fn extract(&self, _turn: &Turn, question: &Question, known: &Schema) -> Result<SchemaSelection, BackendError> {
        let mut text = question.text.clone();
        if let Some(ev) = &question.evidence {
            text.push(' ');
            text.push_str(ev);
        }
        let qt = tokens(&text);
        let mut sel = SchemaSelection::new();
        for t in known.tables() {
            if name_matches(&qt, t.name()) {
                sel.add_table(t.name());
                for c in t.columns() {
                    if name_matches(&qt, &c.name) {
                        sel.add_column(t.name(), &c.name);
                    }
                }
            }
        }
        for r in &question.gold_refs {
            if known.contains(r) {
                sel.add_ref(r);
            }
        }
        let bare: Vec<String> = sel
            .entries()
            .iter()
            .filter(|e| e.columns.is_empty())
            .map(|e| e.table.clone())
            .collect();
        for name in bare {
            if let Some(t) = known.table(&name) {
                let pick = t.primary_key().first().cloned().or_else(|| t.columns().first().map(|c| c.name.clone()));
                if let Some(c) = pick {
                    sel.add_column(t.name(), &c);
                }
            }
        }

        let hidden: Vec<&SchemaRef> = question.gold_refs.iter().filter(|r| self.hidden(question, r)).collect();
        for r in &hidden {
            if let SchemaRef::Column(_) = r {
                sel.remove(r);
            }
        }
        for r in &hidden {
            if let SchemaRef::Table { name } = r {
                let needed = question.gold_refs.iter().any(|g| {
                    matches!(g, SchemaRef::Column(c) if c.table_name.eq_ignore_ascii_case(name)) && sel.contains(g)
                });
                if !needed {
                    sel.remove(r);
                }
            }
        }
        Ok(sel)
    }

    fn generate(
        &self,
        _turn: &Turn,
        question: &Question,
        schema: &Schema,
        _strategy: Strategy,
        _shots: usize,
    ) -> Result<String, BackendError> {
        if let Some(gold) = &question.gold_sql {
            if question.gold_refs.iter().all(|r| schema.contains(r)) {
                return Ok(gold.clone());
            }
        }
        fallback_sql(schema).ok_or_else(|| BackendError::NoSql { raw: String::new() })
    }

    fn judge(
        &self,
        _turn: &Turn,
        question: &Question,
        candidate: &str,
        _known: &Schema,
    ) -> Result<Judgment, BackendError> {
        let Some(gold) = &question.gold_sql else {
            return Ok(Judgment {
                positive: true,
                note: None,
            });
        };
        let same = match (parse_sql(candidate), parse_sql(gold)) {
            (Ok(c), Ok(g)) => canonicalize(&c) == canonicalize(&g),
            _ => false,
        };
        Ok(Judgment {
            positive: same,
            note: (!same).then(|| "the query does not answer the question".to_string()),
        })
    }
}

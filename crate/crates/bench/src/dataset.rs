//! Loading Spider- and BIRD-style benchmark distributions.
//!
//! Both formats describe schemas in a tables file: one record per database
//! with `table_names_original`, `column_names_original` as `[table index,
//! name]` pairs (index -1 is the `*` pseudo-column), `column_types`,
//! `primary_keys` (column indices, possibly nested for composite keys) and
//! `foreign_keys` as `[from column, to column]` index pairs. Questions carry
//! `db_id`, `question` and the gold SQL (`query` in Spider, `SQL` in BIRD,
//! which also has `evidence` and `difficulty`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use segsql_core::agents::Question;
use segsql_core::sql::Difficulty;
use segsql_core::{Column, ColumnRef, ColumnType, ForeignKey, Schema, TableDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SpiderDev,
    SpiderTest,
    BirdDev,
    Toy,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::SpiderDev => "spider-dev",
            Provenance::SpiderTest => "spider-test",
            Provenance::BirdDev => "bird-dev",
            Provenance::Toy => "toy",
        }
    }

    /// (tables file, questions file, database directory) candidates, in
    /// order of preference.
    fn layout(self) -> (&'static [&'static str], &'static [&'static str], &'static [&'static str]) {
        match self {
            Provenance::SpiderDev | Provenance::Toy => (&["tables.json"], &["dev.json"], &["database"]),
            Provenance::SpiderTest => (
                &["test_tables.json", "tables.json"],
                &["test.json"],
                &["test_database", "database"],
            ),
            Provenance::BirdDev => (&["dev_tables.json"], &["dev.json"], &["dev_databases"]),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "spider-dev" | "spider" => Ok(Provenance::SpiderDev),
            "spider-test" => Ok(Provenance::SpiderTest),
            "bird-dev" | "bird" => Ok(Provenance::BirdDev),
            "toy" => Ok(Provenance::Toy),
            other => Err(format!("unknown dataset provenance `{other}` (spider-dev, spider-test, bird-dev, toy)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{}: {message}", file.display(), index.map(|i| format!(" record {i}")).unwrap_or_default())]
    Malformed {
        file: PathBuf,
        index: Option<usize>,
        message: String,
    },
    #[error("none of {candidates:?} exists under {}", root.display())]
    MissingFile { root: PathBuf, candidates: Vec<String> },
    #[error("question {index} refers to unknown database `{db_id}`")]
    UnknownDatabase { index: usize, db_id: String },
    #[error("database file for `{db_id}` not found at {}", path.display())]
    MissingDatabaseFile { db_id: String, path: PathBuf },
}

/// Schemas, questions and database files of one benchmark split.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub provenance: Provenance,
    pub root: PathBuf,
    pub schemas: BTreeMap<String, Schema>,
    pub questions: Vec<Question>,
    pub databases: BTreeMap<String, PathBuf>,
    /// Non-fatal problems met while loading (dropped keys, unparsable gold).
    pub warnings: Vec<String>,
}

impl DatasetBundle {
    pub fn schema(&self, db_id: &str) -> Option<&Schema> {
        self.schemas.get(db_id)
    }

    pub fn database(&self, db_id: &str) -> Option<&Path> {
        self.databases.get(db_id).map(PathBuf::as_path)
    }

    /// The bundle restricted to the given question ids (in bundle order).
    pub fn filter_questions(&self, ids: &[String]) -> DatasetBundle {
        let mut out = self.clone();
        out.questions.retain(|q| ids.iter().any(|id| id == &q.question_id));
        out
    }
}

#[derive(Deserialize)]
struct TablesRecord {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    #[serde(default)]
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<Value>,
    #[serde(default)]
    foreign_keys: Vec<(i64, i64)>,
}

fn pick(root: &Path, candidates: &[&str], want_dir: bool) -> Result<PathBuf, DatasetError> {
    candidates
        .iter()
        .map(|c| root.join(c))
        .find(|p| if want_dir { p.is_dir() } else { p.is_file() })
        .ok_or_else(|| DatasetError::MissingFile {
            root: root.to_path_buf(),
            candidates: candidates.iter().map(|s| s.to_string()).collect(),
        })
}

fn read_json(path: &Path) -> Result<Value, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if text.trim().is_empty() {
        return Ok(Value::Array(Vec::new()));
    }
    serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
        file: path.to_path_buf(),
        index: None,
        message: e.to_string(),
    })
}

fn records(path: &Path) -> Result<Vec<Value>, DatasetError> {
    match read_json(path)? {
        Value::Array(items) => Ok(items),
        _ => Err(DatasetError::Malformed {
            file: path.to_path_buf(),
            index: None,
            message: "expected a JSON array".into(),
        }),
    }
}

/// Builds one schema from a tables-file record; dangling keys are dropped
/// with a warning.
fn schema_from_record(rec: TablesRecord, warnings: &mut Vec<String>) -> Result<Schema, String> {
    let mut columns: Vec<Vec<Column>> = vec![Vec::new(); rec.table_names_original.len()];
    // Column index -> (table index, column name), for key lookups.
    let mut index: Vec<Option<(usize, String)>> = Vec::with_capacity(rec.column_names_original.len());
    for (i, (t, name)) in rec.column_names_original.iter().enumerate() {
        if *t < 0 {
            index.push(None);
            continue;
        }
        let t = *t as usize;
        let Some(cols) = columns.get_mut(t) else {
            return Err(format!("column `{name}` refers to table index {t}"));
        };
        if cols.iter().any(|c| c.name.eq_ignore_ascii_case(name)) {
            warnings.push(format!("{}: duplicate column `{name}` in table {t} skipped", rec.db_id));
            index.push(Some((t, name.clone())));
            continue;
        }
        let ty = rec.column_types.get(i).map(|s| ColumnType::from_declared(s)).unwrap_or_default();
        cols.push(Column::new(name.clone(), ty));
        index.push(Some((t, name.clone())));
    }

    let mut pks: Vec<Vec<String>> = vec![Vec::new(); columns.len()];
    let mut add_pk = |ci: i64, warnings: &mut Vec<String>| match usize::try_from(ci).ok().and_then(|c| index.get(c).cloned().flatten()) {
        Some((t, name)) => pks[t].push(name),
        None => warnings.push(format!("{}: primary key column index {ci} dropped", rec.db_id)),
    };
    for pk in &rec.primary_keys {
        match pk {
            Value::Number(n) => add_pk(n.as_i64().unwrap_or(-1), warnings),
            Value::Array(items) => {
                for n in items {
                    add_pk(n.as_i64().unwrap_or(-1), warnings);
                }
            }
            _ => warnings.push(format!("{}: unreadable primary key entry {pk}", rec.db_id)),
        }
    }

    let mut tables = Vec::with_capacity(columns.len());
    for ((name, cols), pk) in rec.table_names_original.iter().zip(columns).zip(pks) {
        tables.push(TableDef::new(name.clone(), cols, pk).map_err(|e| e.to_string())?);
    }

    let resolve = |ci: i64| -> Option<ColumnRef> {
        let (t, name) = usize::try_from(ci).ok().and_then(|c| index.get(c).cloned().flatten())?;
        Some(ColumnRef::new(rec.table_names_original[t].clone(), name))
    };
    let mut keys = Vec::new();
    for (from, to) in &rec.foreign_keys {
        match (resolve(*from), resolve(*to)) {
            (Some(f), Some(t)) => keys.push(ForeignKey::new(f, t)),
            _ => warnings.push(format!("{}: dangling foreign key [{from}, {to}] dropped", rec.db_id)),
        }
    }
    Schema::new(rec.db_id.clone(), tables, keys).map_err(|e| e.to_string())
}

fn text_field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|n| obj.get(*n).and_then(Value::as_str))
}

/// Loads a benchmark split rooted at `root`.
pub fn load_dataset(root: &Path, provenance: Provenance) -> Result<DatasetBundle, DatasetError> {
    let (tables_names, question_names, db_dirs) = provenance.layout();
    let tables_path = pick(root, tables_names, false)?;
    let questions_path = pick(root, question_names, false)?;
    let db_dir = pick(root, db_dirs, true)?;
    let mut warnings = Vec::new();

    let mut schemas = BTreeMap::new();
    let mut databases = BTreeMap::new();
    for (i, value) in records(&tables_path)?.into_iter().enumerate() {
        let malformed = |message: String| DatasetError::Malformed {
            file: tables_path.clone(),
            index: Some(i),
            message,
        };
        let rec: TablesRecord = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        let db_id = rec.db_id.clone();
        let schema = schema_from_record(rec, &mut warnings).map_err(malformed)?;
        let db_path = db_dir.join(&db_id).join(format!("{db_id}.sqlite"));
        schemas.insert(db_id.clone(), schema);
        databases.insert(db_id, db_path);
    }

    let mut questions = Vec::new();
    for (i, value) in records(&questions_path)?.into_iter().enumerate() {
        let malformed = |message: &str| DatasetError::Malformed {
            file: questions_path.clone(),
            index: Some(i),
            message: message.to_string(),
        };
        let Value::Object(obj) = value else {
            return Err(malformed("expected an object"));
        };
        let db_id = text_field(&obj, &["db_id"]).ok_or_else(|| malformed("missing `db_id`"))?;
        let text = text_field(&obj, &["question"]).ok_or_else(|| malformed("missing `question`"))?;
        let gold = text_field(&obj, &["query", "SQL", "sql"]).ok_or_else(|| malformed("missing gold SQL"))?;
        let schema = schemas.get(db_id).ok_or_else(|| DatasetError::UnknownDatabase {
            index: i,
            db_id: db_id.to_string(),
        })?;
        let db_path = &databases[db_id];
        if !db_path.is_file() {
            return Err(DatasetError::MissingDatabaseFile {
                db_id: db_id.to_string(),
                path: db_path.clone(),
            });
        }
        let question_id = match obj.get("question_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("{i:04}"),
        };
        let mut q = Question::new(question_id, db_id, text);
        q.evidence = text_field(&obj, &["evidence"]).filter(|e| !e.trim().is_empty()).map(str::to_string);
        q.difficulty_label = text_field(&obj, &["difficulty", "hardness"]).and_then(|d| Difficulty::from_str(d).ok());
        match q.clone().with_gold(gold, schema) {
            Ok(with_gold) => q = with_gold,
            Err(e) => {
                warnings.push(format!("question {}: gold SQL does not parse ({e})", q.question_id));
                q.gold_sql = Some(gold.to_string());
            }
        }
        questions.push(q);
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(DatasetBundle {
        provenance,
        root: root.to_path_buf(),
        schemas,
        questions,
        databases,
        warnings,
    })
}

//! Read-only query execution against benchmark SQLite files.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags, StatementStatus};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use segsql_core::sql::parse_sql;

/// VM instructions between deadline checks.
const PROGRESS_PERIOD: i32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("cannot open database: {0}")]
    Open(String),
    #[error("{0}")]
    Execution(String),
    #[error("query exceeded the {0:?} time limit")]
    Timeout(Duration),
    #[error("statement would modify the database")]
    NotReadOnly,
}

/// One result value. Integers and reals compare numerically, so `1` equals
/// `1.0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Int(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Int(a), Cell::Real(b)) => (*a as f64).total_cmp(b),
            (Cell::Real(a), Cell::Int(b)) => a.total_cmp(&(*b as f64)),
            (Cell::Real(a), Cell::Real(b)) => a.total_cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl From<ValueRef<'_>> for Cell {
    fn from(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Int(i),
            ValueRef::Real(f) => Cell::Real(f),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
        }
    }
}

pub type Row = Vec<Cell>;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub rows: Vec<Row>,
    /// Virtual-machine instructions the statement executed.
    pub vm_steps: u64,
    pub elapsed: Duration,
}

/// A read-only connection to one database file.
pub struct Database {
    conn: Connection,
}

impl Database {
    pub fn open(path: &Path) -> Result<Self, ExecError> {
        let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX;
        let conn = Connection::open_with_flags(path, flags).map_err(|e| ExecError::Open(format!("{}: {e}", path.display())))?;
        conn.pragma_update(None, "query_only", true)
            .map_err(|e| ExecError::Open(e.to_string()))?;
        Ok(Self { conn })
    }

    /// Runs one read-only statement, giving up after `timeout`.
    pub fn execute(&self, sql: &str, timeout: Duration) -> Result<QueryResult, ExecError> {
        let start = Instant::now();
        let deadline = start + timeout;
        self.conn
            .progress_handler(PROGRESS_PERIOD, Some(move || Instant::now() >= deadline))
            .map_err(|e| ExecError::Execution(e.to_string()))?;
        let out = self.run(sql, start, timeout);
        let _ = self.conn.progress_handler(PROGRESS_PERIOD, None::<fn() -> bool>);
        out
    }

    fn run(&self, sql: &str, start: Instant, timeout: Duration) -> Result<QueryResult, ExecError> {
        let interrupted = |e: rusqlite::Error| {
            if matches!(e.sqlite_error_code(), Some(rusqlite::ErrorCode::OperationInterrupted)) {
                ExecError::Timeout(timeout)
            } else {
                ExecError::Execution(e.to_string())
            }
        };
        let mut stmt = self.conn.prepare(sql).map_err(interrupted)?;
        if !stmt.readonly() {
            return Err(ExecError::NotReadOnly);
        }
        let width = stmt.column_count();
        let mut rows = Vec::new();
        {
            let mut cursor = stmt.query([]).map_err(interrupted)?;
            while let Some(row) = cursor.next().map_err(interrupted)? {
                let mut out = Vec::with_capacity(width);
                for i in 0..width {
                    out.push(Cell::from(row.get_ref(i).map_err(interrupted)?));
                }
                rows.push(out);
            }
        }
        let vm_steps = stmt.get_status(StatementStatus::VmStep).max(0) as u64;
        Ok(QueryResult {
            rows,
            vm_steps,
            elapsed: start.elapsed(),
        })
    }
}

/// Opens `path` read-only and runs `sql` with a time limit.
pub fn execute_sql(path: &Path, sql: &str, timeout: Duration) -> Result<QueryResult, ExecError> {
    Database::open(path)?.execute(sql, timeout)
}

/// Whether two result sets agree: as sequences when `ordered`, otherwise as
/// multisets of rows.
pub fn results_match(pred: &[Row], gold: &[Row], ordered: bool) -> bool {
    if pred.len() != gold.len() {
        return false;
    }
    if ordered {
        return pred == gold;
    }
    let mut counts: BTreeMap<&Row, i64> = BTreeMap::new();
    for r in gold {
        *counts.entry(r).or_default() += 1;
    }
    for r in pred {
        match counts.get_mut(r) {
            Some(c) if *c > 0 => *c -= 1,
            _ => return false,
        }
    }
    true
}

/// True when the outermost query of `sql` has ORDER BY, so row order counts.
pub fn is_ordered(sql: &str) -> bool {
    match parse_sql(sql) {
        Ok(ast) => ast.has_order_by(),
        Err(_) => sql.to_lowercase().split_whitespace().collect::<Vec<_>>().windows(2).any(|w| w == ["order", "by"]),
    }
}

/// How query cost is measured for the efficiency score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingMode {
    /// Virtual-machine instruction count of one execution; deterministic.
    VmSteps,
    /// Median wall-clock seconds of three executions after one warm-up.
    WallClock,
}

impl std::str::FromStr for TimingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vm-steps" => Ok(TimingMode::VmSteps),
            "wall-clock" => Ok(TimingMode::WallClock),
            other => Err(format!("unknown timing mode `{other}` (vm-steps, wall-clock)")),
        }
    }
}

/// Executes `sql` and returns its rows with a cost under `mode`.
pub fn measure(db: &Database, sql: &str, timeout: Duration, mode: TimingMode) -> Result<(QueryResult, f64), ExecError> {
    match mode {
        TimingMode::VmSteps => {
            let r = db.execute(sql, timeout)?;
            let cost = r.vm_steps.max(1) as f64;
            Ok((r, cost))
        }
        TimingMode::WallClock => {
            db.execute(sql, timeout)?;
            let mut runs = Vec::with_capacity(3);
            let mut last = None;
            for _ in 0..3 {
                let r = db.execute(sql, timeout)?;
                runs.push(r.elapsed.as_secs_f64());
                last = Some(r);
            }
            runs.sort_by(f64::total_cmp);
            Ok((last.expect("three runs"), runs[1]))
        }
    }
}

/// Execution accuracy of one prediction: both queries run and agree.
pub fn exec_accuracy(pred_sql: &str, gold_sql: &str, db_path: &Path, timeout: Duration) -> bool {
    let Ok(db) = Database::open(db_path) else {
        return false;
    };
    match (db.execute(pred_sql, timeout), db.execute(gold_sql, timeout)) {
        (Ok(p), Ok(g)) => results_match(&p.rows, &g.rows, is_ordered(gold_sql)),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int(i: i64) -> Cell {
        Cell::Int(i)
    }

    #[test]
    fn numbers_compare_across_storage_classes() {
        assert_eq!(Cell::Int(1), Cell::Real(1.0));
        assert!(Cell::Null < Cell::Int(-5));
        assert!(Cell::Int(3) < Cell::Text("a".into()));
    }

    #[test]
    fn multiset_and_sequence_matching() {
        let a = vec![vec![int(1)], vec![int(2)], vec![int(2)]];
        let b = vec![vec![int(2)], vec![int(1)], vec![int(2)]];
        let c = vec![vec![int(1)], vec![int(1)], vec![int(2)]];
        assert!(results_match(&a, &b, false));
        assert!(!results_match(&a, &b, true));
        assert!(!results_match(&a, &c, false));
        assert!(results_match(&[], &[], true));
    }

    #[test]
    fn order_detection() {
        assert!(is_ordered("SELECT a FROM t ORDER BY a"));
        assert!(!is_ordered("SELECT a FROM (SELECT a FROM t ORDER BY a)"));
        assert!(is_ordered("SELECT a FROM t ORDER  BY a WITH nonsense("));
    }
}

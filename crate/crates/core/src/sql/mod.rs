//! SQL analysis: parsing a single SELECT, resolving the identifiers it
//! touches, profiling its structure and rendering a canonical form.
//!
//! The accepted dialect is the SQLite-flavoured subset used by common
//! text-to-SQL benchmarks. Anything other than one query statement is
//! rejected.

mod canonical;
mod profile;
mod resolve;

use std::fmt;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Query, SetExpr, Statement};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::{Parser, ParserError};
use sqlparser::tokenizer::{Token, Tokenizer};
use thiserror::Error;

pub use canonical::canonicalize;
pub use profile::{classify_difficulty, structural_profile, Difficulty, StructuralProfile};
pub use resolve::{referenced_identifiers, semantic_check, AmbiguousColumn, References, UnresolvedColumn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("empty SQL text")]
    Empty,
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        message: String,
        line: u64,
        column: u64,
        /// 1-based index of the offending token, when it could be located.
        token_index: Option<usize>,
    },
    #[error("expected a single statement, found {0}")]
    MultiStatement(usize),
    #[error("only SELECT queries are supported, found: {0}")]
    Unsupported(String),
}

/// A parsed single-statement query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlAst {
    query: Query,
}

impl SqlAst {
    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn into_query(self) -> Query {
        self.query
    }

    /// Deterministic SQL text for this tree; parsing it yields an equal tree.
    pub fn render(&self) -> String {
        self.query.to_string()
    }

    /// True when the outermost query imposes an order on its rows.
    pub fn has_order_by(&self) -> bool {
        self.query.order_by.is_some()
    }

    pub fn is_set_operation(&self) -> bool {
        matches!(*self.query.body, SetExpr::SetOperation { .. })
    }
}

impl fmt::Display for SqlAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.query.fmt(f)
    }
}

pub fn parse_sql(text: &str) -> Result<SqlAst, SqlError> {
    if text.trim().trim_matches(';').trim().is_empty() {
        return Err(SqlError::Empty);
    }
    let dialect = SQLiteDialect {};
    let mut statements = Parser::parse_sql(&dialect, text).map_err(|e| syntax_error(text, e))?;
    match statements.len() {
        0 => Err(SqlError::Empty),
        1 => match statements.pop() {
            Some(Statement::Query(query)) => Ok(SqlAst { query: *query }),
            Some(other) => {
                let head: String = other.to_string().chars().take(40).collect();
                Err(SqlError::Unsupported(head))
            }
            None => Err(SqlError::Empty),
        },
        n => Err(SqlError::MultiStatement(n)),
    }
}

fn syntax_error(text: &str, err: ParserError) -> SqlError {
    let message = match err {
        ParserError::TokenizerError(m) | ParserError::ParserError(m) => m,
        ParserError::RecursionLimitExceeded => "recursion limit exceeded".to_string(),
    };
    let (line, column) = error_location(&message).unwrap_or((0, 0));
    let token_index = (line > 0).then(|| token_at(text, line, column)).flatten();
    SqlError::Syntax {
        message,
        line,
        column,
        token_index,
    }
}

fn error_location(message: &str) -> Option<(u64, u64)> {
    let number_after = |label: &str| -> Option<u64> {
        let start = message.rfind(label)? + label.len();
        let digits: String = message[start..].chars().take_while(char::is_ascii_digit).collect();
        digits.parse().ok()
    };
    Some((number_after("Line: ")?, number_after("Column: ")?))
}

fn token_at(text: &str, line: u64, column: u64) -> Option<usize> {
    let dialect = SQLiteDialect {};
    let tokens = Tokenizer::new(&dialect, text).tokenize_with_location().ok()?;
    tokens
        .iter()
        .filter(|t| !matches!(t.token, Token::Whitespace(_)))
        .position(|t| {
            let s = t.span.start;
            s.line > line || (s.line == line && s.column >= column)
        })
        .map(|i| i + 1)
}

/// One thing a check found wrong (or suspicious) about a query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Finding {
    MissingTable { table: String },
    MissingColumn { table: Option<String>, column: String },
    AmbiguousColumn { column: String, candidates: Vec<String> },
    ParseFailure { message: String },
    SemanticDoubt { note: String },
    /// A backend named something that does not exist; it was dropped.
    HallucinatedIdentifier { reference: String },
}

impl Finding {
    /// Whether this finding rules out a positive verdict.
    pub fn is_blocking(&self) -> bool {
        !matches!(self, Finding::HallucinatedIdentifier { .. })
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingTable { table } => write!(f, "missing table `{table}`"),
            Finding::MissingColumn { table: Some(t), column } => write!(f, "missing column `{t}.{column}`"),
            Finding::MissingColumn { table: None, column } => write!(f, "missing column `{column}`"),
            Finding::AmbiguousColumn { column, candidates } => {
                write!(f, "ambiguous column `{column}` ({})", candidates.join(", "))
            }
            Finding::ParseFailure { message } => write!(f, "parse failure: {message}"),
            Finding::SemanticDoubt { note } => write!(f, "semantic doubt: {note}"),
            Finding::HallucinatedIdentifier { reference } => write!(f, "dropped unknown identifier `{reference}`"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_select() {
        let ast = parse_sql("SELECT id FROM emp").unwrap();
        let SetExpr::Select(select) = ast.query().body.as_ref() else {
            panic!("expected select");
        };
        assert_eq!(select.projection.len(), 1);
        assert_eq!(select.from.len(), 1);
        assert_eq!(ast.render(), "SELECT id FROM emp");
    }

    #[test]
    fn reports_syntax_error_position() {
        match parse_sql("SELEC id FROM emp") {
            Err(SqlError::Syntax {
                line,
                column,
                token_index,
                ..
            }) => {
                assert_eq!((line, column), (1, 1));
                assert_eq!(token_index, Some(1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_multiple_statements() {
        assert_eq!(
            parse_sql("SELECT a FROM t; DROP TABLE t"),
            Err(SqlError::MultiStatement(2))
        );
        assert!(parse_sql("SELECT a FROM t;").is_ok());
    }

    #[test]
    fn rejects_non_queries_and_empty_input() {
        assert!(matches!(parse_sql("DROP TABLE t"), Err(SqlError::Unsupported(_))));
        assert!(matches!(parse_sql("DELETE FROM t"), Err(SqlError::Unsupported(_))));
        assert_eq!(parse_sql("  ; "), Err(SqlError::Empty));
    }

    #[test]
    fn render_round_trips() {
        for sql in [
            "SELECT T1.name FROM emp AS T1 JOIN dept AS T2 ON T1.dept_id = T2.id WHERE T2.title = 'x'",
            "SELECT count(*) FROM emp GROUP BY dept_id HAVING count(*) > 1 ORDER BY count(*) DESC LIMIT 3",
            "SELECT name FROM emp WHERE id NOT IN (SELECT emp_id FROM award) UNION SELECT title FROM dept",
            "SELECT DISTINCT name FROM emp WHERE name LIKE '%a%' AND age BETWEEN 20 AND 30",
        ] {
            let ast = parse_sql(sql).unwrap();
            assert_eq!(parse_sql(&ast.render()).unwrap(), ast, "{sql}");
        }
    }

    #[test]
    fn blocking_findings() {
        assert!(Finding::MissingTable { table: "t".into() }.is_blocking());
        assert!(!Finding::HallucinatedIdentifier { reference: "t".into() }.is_blocking());
    }
}

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Expr, ObjectNamePart, Query, Select, SetExpr, TableFactor, TableWithJoins, Visit, Visitor};

use super::SqlAst;

/// Structural counts that drive difficulty bucketing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralProfile {
    /// Largest number of tables in any single FROM clause (joins included).
    pub join_table_count: usize,
    /// Deepest query nesting; 0 for a flat query.
    pub nesting_depth: usize,
    pub has_set_operation: bool,
    pub aggregate_count: usize,
    /// Items in the outermost SELECT list.
    pub selected_column_count: usize,
}

/// Spider-style buckets, plus BIRD's labels when a dataset provides them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    pub const SPIDER: [Difficulty; 4] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Extra];
    pub const BIRD: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Moderate, Difficulty::Challenging];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_lowercase().as_str() {
            "easy" => Difficulty::Easy,
            "medium" => Difficulty::Medium,
            "hard" => Difficulty::Hard,
            "extra" | "extra hard" | "extra-hard" => Difficulty::Extra,
            "simple" => Difficulty::Simple,
            "moderate" => Difficulty::Moderate,
            "challenging" => Difficulty::Challenging,
            other => return Err(format!("unknown difficulty `{other}`")),
        })
    }
}

const AGGREGATES: [&str; 7] = ["count", "sum", "avg", "min", "max", "total", "group_concat"];

pub fn structural_profile(ast: &SqlAst) -> StructuralProfile {
    let mut walk = ProfileWalk::default();
    let _ = ast.query().visit(&mut walk);
    let mut profile = walk.profile;
    profile.selected_column_count = first_select(&ast.query().body).map_or(0, |s| s.projection.len());
    profile
}

/// Buckets a query by structure.
///
/// | bucket | rule (first match wins) |
/// |--------|-------------------------|
/// | extra  | set operation, or nesting together with a join of 2+ tables |
/// | hard   | 3+ tables in one FROM (two joins), or any nesting |
/// | easy   | at most one table and at most one aggregate |
/// | medium | everything else (two tables, or several aggregates) |
pub fn classify_difficulty(ast: &SqlAst) -> Difficulty {
    classify_profile(&structural_profile(ast))
}

pub(crate) fn classify_profile(p: &StructuralProfile) -> Difficulty {
    if p.has_set_operation || (p.nesting_depth >= 1 && p.join_table_count >= 2) {
        Difficulty::Extra
    } else if p.join_table_count >= 3 || p.nesting_depth >= 1 {
        Difficulty::Hard
    } else if p.join_table_count <= 1 && p.aggregate_count <= 1 {
        Difficulty::Easy
    } else {
        Difficulty::Medium
    }
}

fn first_select(e: &SetExpr) -> Option<&Select> {
    match e {
        SetExpr::Select(s) => Some(s),
        SetExpr::Query(q) => first_select(&q.body),
        SetExpr::SetOperation { left, .. } => first_select(left),
        _ => None,
    }
}

fn factor_count(twj: &TableWithJoins) -> usize {
    let one = |tf: &TableFactor| match tf {
        TableFactor::NestedJoin { table_with_joins, .. } => factor_count(table_with_joins),
        _ => 1,
    };
    one(&twj.relation) + twj.joins.iter().map(|j| one(&j.relation)).sum::<usize>()
}

fn has_set_op(e: &SetExpr) -> bool {
    match e {
        SetExpr::SetOperation { .. } => true,
        SetExpr::Query(q) => has_set_op(&q.body),
        _ => false,
    }
}

#[derive(Default)]
struct ProfileWalk {
    depth: usize,
    profile: StructuralProfile,
}

impl Visitor for ProfileWalk {
    type Break = ();

    fn pre_visit_query(&mut self, q: &Query) -> ControlFlow<()> {
        self.depth += 1;
        self.profile.nesting_depth = self.profile.nesting_depth.max(self.depth - 1);
        if has_set_op(&q.body) {
            self.profile.has_set_operation = true;
        }
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _q: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn pre_visit_select(&mut self, s: &Select) -> ControlFlow<()> {
        let tables: usize = s.from.iter().map(factor_count).sum();
        self.profile.join_table_count = self.profile.join_table_count.max(tables);
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, e: &Expr) -> ControlFlow<()> {
        if let Expr::Function(f) = e {
            if let Some(ObjectNamePart::Identifier(i)) = f.name.0.last() {
                if AGGREGATES.contains(&i.value.to_lowercase().as_str()) {
                    self.profile.aggregate_count += 1;
                }
            }
        }
        ControlFlow::Continue(())
    }
}

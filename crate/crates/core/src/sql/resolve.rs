//! Scope-aware identifier resolution.
//!
//! Each SELECT opens a scope holding its FROM sources (base tables and
//! derived tables, keyed by alias). Qualified columns resolve through the
//! alias; bare columns resolve against the sources of the innermost scope
//! that has them, walking outwards for correlated subqueries. A double-quoted
//! identifier that resolves nowhere is treated as a string literal, as SQLite
//! does.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, GroupByExpr, Ident, JoinConstraint, JoinOperator, ObjectName, ObjectNamePart, OrderBy, OrderByKind,
    Query, Select, SelectItem, SelectItemQualifiedWildcardKind, SetExpr, TableFactor, TableWithJoins, Visit,
    Visitor,
};

use super::{Finding, SqlAst};
use crate::schema::{ident_key, ColumnRef, Schema, SchemaRef};

/// Everything a query touches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct References {
    /// Base tables, in first-seen order.
    pub tables: Vec<String>,
    /// Columns resolved to their base table.
    pub columns: Vec<ColumnRef>,
    /// Bare columns that more than one source could provide.
    pub ambiguous: Vec<AmbiguousColumn>,
    /// Columns no source in scope could provide.
    pub unresolved: Vec<UnresolvedColumn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousColumn {
    pub column: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedColumn {
    pub qualifier: Option<String>,
    pub column: String,
}

impl References {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.columns.is_empty()
    }

    /// Tables followed by columns, as membership references.
    pub fn schema_refs(&self) -> Vec<SchemaRef> {
        self.tables
            .iter()
            .map(|t| SchemaRef::table(t.clone()))
            .chain(self.columns.iter().cloned().map(SchemaRef::Column))
            .collect()
    }
}

/// Tables and columns `ast` touches, with aliases resolved to base tables.
///
/// Without a schema a bare column resolves only when a single source is in
/// scope; otherwise it is reported as ambiguous among the candidates.
pub fn referenced_identifiers(ast: &SqlAst, schema: Option<&Schema>) -> References {
    let mut r = Resolver::new(schema);
    r.walk_query(ast.query());
    r.refs
}

/// Resolution problems of `ast` against `schema`: unknown tables, unknown
/// columns and ambiguous bare columns. An empty result means the query is
/// mechanically clean.
pub fn semantic_check(ast: &SqlAst, schema: &Schema) -> Vec<Finding> {
    let mut r = Resolver::new(Some(schema));
    r.walk_query(ast.query());
    r.findings
}

#[derive(Debug)]
enum SourceKind {
    Base { table: String, known: bool },
    Derived { columns: Vec<String> },
}

#[derive(Debug)]
struct Source {
    alias: Option<String>,
    kind: SourceKind,
}

impl Source {
    fn label(&self) -> String {
        match (&self.kind, &self.alias) {
            (SourceKind::Base { table, .. }, _) => table.clone(),
            (SourceKind::Derived { .. }, Some(a)) => a.clone(),
            (SourceKind::Derived { .. }, None) => "<subquery>".to_string(),
        }
    }
}

#[derive(Debug, Default)]
struct Scope {
    sources: Vec<Source>,
    output_aliases: Vec<String>,
}

impl Scope {
    fn find_qualifier(&self, q: &str) -> Option<&Source> {
        let key = ident_key(q);
        self.sources
            .iter()
            .find(|s| s.alias.as_deref().map(ident_key).as_deref() == Some(key.as_str()))
            .or_else(|| {
                self.sources.iter().find(|s| {
                    s.alias.is_none() && matches!(&s.kind, SourceKind::Base { table, .. } if ident_key(table) == key)
                })
            })
    }
}

struct Resolver<'s> {
    schema: Option<&'s Schema>,
    scopes: Vec<Scope>,
    ctes: Vec<(String, Vec<String>)>,
    refs: References,
    findings: Vec<Finding>,
}

fn last_ident(name: &ObjectName) -> Option<&Ident> {
    match name.0.last()? {
        ObjectNamePart::Identifier(i) => Some(i),
        _ => None,
    }
}

fn join_constraint(op: &JoinOperator) -> Option<&JoinConstraint> {
    use JoinOperator::*;
    match op {
        Join(c) | Inner(c) | Left(c) | LeftOuter(c) | Right(c) | RightOuter(c) | FullOuter(c) | CrossJoin(c)
        | Semi(c) | LeftSemi(c) | RightSemi(c) | Anti(c) | LeftAnti(c) | RightAnti(c) | StraightJoin(c) => Some(c),
        AsOf { constraint, .. } => Some(constraint),
        _ => None,
    }
}

/// Output column names of a SELECT list, best effort.
fn output_names(select: &Select) -> Vec<String> {
    select
        .projection
        .iter()
        .map(|item| match item {
            SelectItem::ExprWithAlias { alias, .. } => alias.value.clone(),
            SelectItem::UnnamedExpr(Expr::Identifier(i)) => i.value.clone(),
            SelectItem::UnnamedExpr(Expr::CompoundIdentifier(parts)) => {
                parts.last().map(|i| i.value.clone()).unwrap_or_default()
            }
            other => other.to_string(),
        })
        .collect()
}

impl<'s> Resolver<'s> {
    fn new(schema: Option<&'s Schema>) -> Self {
        Resolver {
            schema,
            scopes: Vec::new(),
            ctes: Vec::new(),
            refs: References::default(),
            findings: Vec::new(),
        }
    }

    fn finding(&mut self, f: Finding) {
        if !self.findings.contains(&f) {
            self.findings.push(f);
        }
    }

    fn walk_query(&mut self, q: &Query) -> Vec<String> {
        let mark = self.ctes.len();
        if let Some(with) = &q.with {
            for cte in &with.cte_tables {
                let inner = self.walk_query(&cte.query);
                let cols = if cte.alias.columns.is_empty() {
                    inner
                } else {
                    cte.alias.columns.iter().map(|c| c.name.value.clone()).collect()
                };
                self.ctes.push((ident_key(&cte.alias.name.value), cols));
            }
        }
        let out = match q.body.as_ref() {
            SetExpr::Select(s) => self.walk_select(s, q.order_by.as_ref()),
            other => self.walk_set_expr(other),
        };
        self.ctes.truncate(mark);
        out
    }

    fn walk_set_expr(&mut self, e: &SetExpr) -> Vec<String> {
        match e {
            SetExpr::Select(s) => self.walk_select(s, None),
            SetExpr::Query(q) => self.walk_query(q),
            SetExpr::SetOperation { left, right, .. } => {
                let out = self.walk_set_expr(left);
                self.walk_set_expr(right);
                out
            }
            _ => Vec::new(),
        }
    }

    fn walk_select(&mut self, s: &Select, order_by: Option<&OrderBy>) -> Vec<String> {
        let mut sources = Vec::new();
        for twj in &s.from {
            self.collect_sources(twj, &mut sources);
        }
        let outputs = output_names(s);
        self.scopes.push(Scope {
            sources,
            output_aliases: s
                .projection
                .iter()
                .filter_map(|i| match i {
                    SelectItem::ExprWithAlias { alias, .. } => Some(alias.value.clone()),
                    _ => None,
                })
                .collect(),
        });
        for twj in &s.from {
            self.resolve_joins(twj);
        }
        for item in &s.projection {
            match item {
                SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => self.resolve_expr(e),
                SelectItem::ExprWithAliases { expr, .. } => self.resolve_expr(expr),
                SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(name), _) => {
                    if let Some(q) = last_ident(name) {
                        self.resolve_wildcard_qualifier(q);
                    }
                }
                SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::Expr(e), _) => self.resolve_expr(e),
                SelectItem::Wildcard(_) => {}
            }
        }
        if let Some(e) = &s.selection {
            self.resolve_expr(e);
        }
        if let GroupByExpr::Expressions(exprs, _) = &s.group_by {
            for e in exprs {
                self.resolve_expr(e);
            }
        }
        if let Some(e) = &s.having {
            self.resolve_expr(e);
        }
        if let Some(OrderByKind::Expressions(items)) = order_by.map(|o| &o.kind) {
            for o in items {
                self.resolve_expr(&o.expr);
            }
        }
        self.scopes.pop();
        outputs
    }

    fn collect_sources(&mut self, twj: &TableWithJoins, out: &mut Vec<Source>) {
        self.collect_factor(&twj.relation, out);
        for j in &twj.joins {
            self.collect_factor(&j.relation, out);
        }
    }

    fn collect_factor(&mut self, tf: &TableFactor, out: &mut Vec<Source>) {
        match tf {
            TableFactor::Table { name, alias, .. } => {
                let Some(ident) = last_ident(name) else { return };
                let alias = alias.as_ref().map(|a| a.name.value.clone());
                let key = ident_key(&ident.value);
                if let Some((_, cols)) = self.ctes.iter().rev().find(|(n, _)| *n == key) {
                    out.push(Source {
                        alias: alias.or_else(|| Some(ident.value.clone())),
                        kind: SourceKind::Derived { columns: cols.clone() },
                    });
                    return;
                }
                let (table, known) = match self.schema {
                    Some(s) => match s.table(&ident.value) {
                        Some(t) => (t.name().to_string(), true),
                        None => (ident.value.clone(), false),
                    },
                    None => (ident.value.clone(), true),
                };
                if !known {
                    self.finding(Finding::MissingTable { table: table.clone() });
                }
                if !self.refs.tables.iter().any(|t| ident_key(t) == ident_key(&table)) {
                    self.refs.tables.push(table.clone());
                }
                out.push(Source {
                    alias,
                    kind: SourceKind::Base { table, known },
                });
            }
            TableFactor::Derived { subquery, alias, .. } => {
                let columns = self.walk_query(subquery);
                out.push(Source {
                    alias: alias.as_ref().map(|a| a.name.value.clone()),
                    kind: SourceKind::Derived { columns },
                });
            }
            TableFactor::NestedJoin { table_with_joins, .. } => self.collect_sources(table_with_joins, out),
            _ => {}
        }
    }

    fn resolve_joins(&mut self, twj: &TableWithJoins) {
        if let TableFactor::NestedJoin { table_with_joins, .. } = &twj.relation {
            self.resolve_joins(table_with_joins);
        }
        for j in &twj.joins {
            if let TableFactor::NestedJoin { table_with_joins, .. } = &j.relation {
                self.resolve_joins(table_with_joins);
            }
            match join_constraint(&j.join_operator) {
                Some(JoinConstraint::On(e)) => self.resolve_expr(e),
                Some(JoinConstraint::Using(names)) => {
                    for n in names {
                        if let Some(i) = last_ident(n) {
                            self.resolve_column(None, i);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    fn resolve_expr(&mut self, e: &Expr) {
        let mut walk = ExprWalk { r: self, depth: 0 };
        let _ = e.visit(&mut walk);
    }

    fn note_column(&mut self, table: &str, column: &str) {
        let r = match self.schema.and_then(|s| s.resolve(&ColumnRef::new(table, column))) {
            Some(r) => r,
            None => ColumnRef::new(table, column),
        };
        if !self.refs.columns.contains(&r) {
            self.refs.columns.push(r);
        }
    }

    fn resolve_wildcard_qualifier(&mut self, q: &Ident) {
        let found = self.scopes.iter().rev().any(|s| s.find_qualifier(&q.value).is_some());
        if !found {
            self.finding(Finding::MissingTable { table: q.value.clone() });
        }
    }

    fn resolve_column(&mut self, qualifier: Option<&Ident>, col: &Ident) {
        let c = col.value.as_str();
        if let Some(q) = qualifier {
            let mut hit: Option<(String, bool)> = None;
            let mut derived = false;
            for scope in self.scopes.iter().rev() {
                if let Some(src) = scope.find_qualifier(&q.value) {
                    match &src.kind {
                        SourceKind::Base { table, known } => hit = Some((table.clone(), *known)),
                        SourceKind::Derived { .. } => derived = true,
                    }
                    break;
                }
            }
            match hit {
                Some((table, true)) => {
                    if let Some(s) = self.schema {
                        if !s.contains_column(&table, c) {
                            self.refs.unresolved.push(UnresolvedColumn {
                                qualifier: Some(q.value.clone()),
                                column: c.to_string(),
                            });
                            self.finding(Finding::MissingColumn {
                                table: Some(table),
                                column: c.to_string(),
                            });
                            return;
                        }
                    }
                    self.note_column(&table, c);
                }
                // The missing table is already reported.
                Some((_, false)) => {}
                None if derived => {}
                None => {
                    self.refs.unresolved.push(UnresolvedColumn {
                        qualifier: Some(q.value.clone()),
                        column: c.to_string(),
                    });
                    if self.schema.is_some() {
                        self.finding(Finding::MissingColumn {
                            table: Some(q.value.clone()),
                            column: c.to_string(),
                        });
                    }
                }
            }
            return;
        }

        if let Some(inner) = self.scopes.last() {
            if inner.output_aliases.iter().any(|a| ident_key(a) == ident_key(c)) {
                return;
            }
        }

        let key = ident_key(c);
        for scope in self.scopes.iter().rev() {
            let mut matched: Vec<&Source> = Vec::new();
            let mut unknown: Vec<&Source> = Vec::new();
            for src in &scope.sources {
                match &src.kind {
                    SourceKind::Base { table, known: true } => match self.schema {
                        Some(s) if s.contains_column(table, c) => matched.push(src),
                        Some(_) => {}
                        None => unknown.push(src),
                    },
                    SourceKind::Base { known: false, .. } => {}
                    SourceKind::Derived { columns } => {
                        if columns.iter().any(|x| ident_key(x) == key) {
                            matched.push(src);
                        }
                    }
                }
            }
            let total = matched.len() + unknown.len();
            if total == 0 {
                continue;
            }
            if total == 1 {
                let src = matched.first().or(unknown.first()).copied();
                if let Some(Source {
                    kind: SourceKind::Base { table, .. },
                    ..
                }) = src
                {
                    let table = table.clone();
                    self.note_column(&table, c);
                }
                return;
            }
            let candidates: Vec<String> = matched.iter().chain(unknown.iter()).map(|s| s.label()).collect();
            let amb = AmbiguousColumn {
                column: c.to_string(),
                candidates: candidates.clone(),
            };
            if !self.refs.ambiguous.contains(&amb) {
                self.refs.ambiguous.push(amb);
            }
            if self.schema.is_some() {
                self.finding(Finding::AmbiguousColumn {
                    column: c.to_string(),
                    candidates,
                });
            }
            return;
        }

        if col.quote_style == Some('"') {
            return;
        }
        self.refs.unresolved.push(UnresolvedColumn {
            qualifier: None,
            column: c.to_string(),
        });
        if self.schema.is_some() {
            let inner = self.scopes.last();
            let any_missing = inner.is_some_and(|s| {
                s.sources
                    .iter()
                    .any(|x| matches!(x.kind, SourceKind::Base { known: false, .. }))
            });
            if any_missing {
                return;
            }
            let bases: Vec<String> = inner
                .map(|s| {
                    s.sources
                        .iter()
                        .filter_map(|x| match &x.kind {
                            SourceKind::Base { table, .. } => Some(table.clone()),
                            _ => None,
                        })
                        .collect()
                })
                .unwrap_or_default();
            let table = if bases.len() == 1 { bases.into_iter().next() } else { None };
            self.finding(Finding::MissingColumn {
                table,
                column: c.to_string(),
            });
        }
    }
}

struct ExprWalk<'a, 's> {
    r: &'a mut Resolver<'s>,
    depth: usize,
}

impl Visitor for ExprWalk<'_, '_> {
    type Break = ();

    fn pre_visit_query(&mut self, q: &Query) -> ControlFlow<()> {
        if self.depth == 0 {
            self.r.walk_query(q);
        }
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _q: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, e: &Expr) -> ControlFlow<()> {
        if self.depth > 0 {
            return ControlFlow::Continue(());
        }
        match e {
            Expr::Identifier(i) => self.r.resolve_column(None, i),
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let n = parts.len();
                self.r.resolve_column(Some(&parts[n - 2]), &parts[n - 1]);
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

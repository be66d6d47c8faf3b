//! Canonical rendering used for exact-match scoring.
//!
//! The canonical string is the rendered query after three rewrites:
//! table aliases are replaced by the table they stand for (unless the table
//! occurs more than once, as in a self-join), the operands of every AND
//! chain are sorted, and everything outside quotes is lowercased with
//! whitespace collapsed.

use std::collections::HashMap;
use std::ops::ControlFlow;

use sqlparser::ast::{
    BinaryOperator, Expr, Ident, ObjectNamePart, Query, Select, SelectItem, SelectItemQualifiedWildcardKind,
    TableFactor, Visit, VisitMut, Visitor, VisitorMut,
};

use super::SqlAst;
use crate::schema::ident_key;

pub fn canonicalize(ast: &SqlAst) -> String {
    let mut query: Query = ast.query().clone();

    let mut census = AliasCensus::default();
    let _ = query.visit(&mut census);
    let inline = census.inlinable();

    let mut rewrite = Rewrite { inline: &inline };
    let _ = VisitMut::visit(&mut query, &mut rewrite);

    normalize_text(&query.to_string())
}

/// Lowercases outside quotes and collapses whitespace runs to one space.
fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut quote: Option<char> = None;
    let mut pending_space = false;
    for ch in s.chars() {
        match quote {
            Some(q) => {
                out.push(ch);
                if ch == q {
                    quote = None;
                }
            }
            None => {
                if ch.is_whitespace() {
                    pending_space = true;
                    continue;
                }
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                if matches!(ch, '\'' | '"' | '`') {
                    quote = Some(ch);
                    out.push(ch);
                } else {
                    out.extend(ch.to_lowercase());
                }
            }
        }
    }
    out
}

#[derive(Default)]
struct AliasCensus {
    table_uses: HashMap<String, usize>,
    aliases: HashMap<String, Vec<(String, String)>>,
}

impl AliasCensus {
    /// alias key -> table name it can be replaced with.
    fn inlinable(&self) -> HashMap<String, String> {
        let mut out = HashMap::new();
        for (alias, targets) in &self.aliases {
            let [(table_key, table)] = targets.as_slice() else {
                continue;
            };
            if self.table_uses.get(table_key).copied() != Some(1) {
                continue;
            }
            if alias != table_key && self.table_uses.contains_key(alias) {
                continue;
            }
            out.insert(alias.clone(), table.clone());
        }
        out
    }
}

impl Visitor for AliasCensus {
    type Break = ();

    fn pre_visit_table_factor(&mut self, tf: &TableFactor) -> ControlFlow<()> {
        if let TableFactor::Table { name, alias, .. } = tf {
            if let Some(ObjectNamePart::Identifier(t)) = name.0.last() {
                let key = ident_key(&t.value);
                *self.table_uses.entry(key.clone()).or_default() += 1;
                if let Some(a) = alias {
                    self.aliases
                        .entry(ident_key(&a.name.value))
                        .or_default()
                        .push((key, t.value.clone()));
                }
            }
        }
        ControlFlow::Continue(())
    }
}

struct Rewrite<'a> {
    inline: &'a HashMap<String, String>,
}

impl Rewrite<'_> {
    fn replacement(&self, qualifier: &Ident) -> Option<Ident> {
        self.inline.get(&ident_key(&qualifier.value)).map(|t| Ident::new(t.clone()))
    }
}

impl VisitorMut for Rewrite<'_> {
    type Break = ();

    fn pre_visit_table_factor(&mut self, tf: &mut TableFactor) -> ControlFlow<()> {
        match tf {
            TableFactor::Table { alias, .. } => {
                if let Some(a) = alias {
                    if self.inline.contains_key(&ident_key(&a.name.value)) {
                        *alias = None;
                    } else {
                        a.explicit = true;
                    }
                }
            }
            TableFactor::Derived { alias: Some(a), .. } => a.explicit = true,
            _ => {}
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_select(&mut self, s: &mut Select) -> ControlFlow<()> {
        for item in &mut s.projection {
            if let SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(name), _) = item {
                if let Some(ObjectNamePart::Identifier(q)) = name.0.last_mut() {
                    if let Some(r) = self.replacement(q) {
                        *q = r;
                    }
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_ident(&mut self, ident: &mut Ident) -> ControlFlow<()> {
        if ident.quote_style.is_none() {
            ident.value = ident.value.to_lowercase();
        }
        ControlFlow::Continue(())
    }

    fn post_visit_expr(&mut self, e: &mut Expr) -> ControlFlow<()> {
        match e {
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let n = parts.len();
                if let Some(r) = self.replacement(&parts[n - 2]) {
                    parts[n - 2] = r;
                }
            }
            Expr::BinaryOp {
                op: BinaryOperator::And,
                ..
            } => {
                let mut terms = Vec::new();
                flatten_and(std::mem::replace(e, Expr::value(sqlparser::ast::Value::Null)), &mut terms);
                let mut keyed: Vec<(String, Expr)> =
                    terms.into_iter().map(|t| (normalize_text(&t.to_string()), t)).collect();
                keyed.sort_by(|a, b| a.0.cmp(&b.0));
                let mut it = keyed.into_iter().map(|(_, t)| t);
                if let Some(first) = it.next() {
                    *e = it.fold(first, |acc, t| Expr::BinaryOp {
                        left: Box::new(acc),
                        op: BinaryOperator::And,
                        right: Box::new(t),
                    });
                }
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

fn flatten_and(e: Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            flatten_and(*left, out);
            flatten_and(*right, out);
        }
        other => out.push(other),
    }
}

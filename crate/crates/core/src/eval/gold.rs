//! Columns referenced by a SQL statement, resolved against a schema by
//! walking the parse tree.

use std::collections::{BTreeSet, HashMap};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, GroupByExpr, JoinConstraint, JoinOperator, ObjectName, OrderByKind, Query, Select,
    SelectItem, SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor, TableWithJoins,
    Visit, Visitor,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use crate::schema::{normalize_ident, ColumnRef, DatabaseSchema};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GoldParseError {
    #[error("cannot parse gold SQL: {0}")]
    Parse(String),
    #[error("gold SQL is not a query")]
    NotAQuery,
}

/// Extracted references plus what needs a human look.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldColumns {
    pub refs: BTreeSet<ColumnRef>,
    /// Unqualified names found in more than one table in scope; every
    /// candidate was included.
    pub ambiguous: BTreeSet<String>,
    /// Names that match nothing in the schema.
    pub unresolved: BTreeSet<String>,
}

pub fn extract_gold_columns(
    sql: &str,
    schema: &DatabaseSchema,
) -> Result<GoldColumns, GoldParseError> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| GoldParseError::Parse(e.to_string()))?;
    let mut ex = Extractor {
        schema,
        ctes: Vec::new(),
        out: GoldColumns::default(),
    };
    let mut any = false;
    for st in &statements {
        if let Statement::Query(q) = st {
            ex.query(q, &[]);
            any = true;
        }
    }
    if !any {
        return Err(GoldParseError::NotAQuery);
    }
    Ok(ex.out)
}

#[derive(Debug, Clone)]
enum Source {
    Base(String),
    /// Output names of a subquery or CTE; `None` when unknown.
    Derived(Option<Vec<String>>),
}

#[derive(Debug, Clone, Default)]
struct Scope {
    bindings: Vec<(String, Source)>,
    aliases: BTreeSet<String>,
}

enum RawRef {
    Bare(String),
    Qualified(Vec<String>),
}

/// Collects column identifiers of one expression, skipping the insides of
/// nested queries, which are returned for separate resolution.
#[derive(Default)]
struct ExprRefs {
    depth: usize,
    refs: Vec<RawRef>,
    nested: Vec<Query>,
}

impl Visitor for ExprRefs {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if self.depth == 0 {
            self.nested.push(query.clone());
        }
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _query: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if self.depth > 0 {
            return ControlFlow::Continue(());
        }
        match expr {
            Expr::Identifier(id) => self.refs.push(RawRef::Bare(normalize_ident(&id.value))),
            Expr::CompoundIdentifier(parts) => self.refs.push(RawRef::Qualified(
                parts.iter().map(|p| normalize_ident(&p.value)).collect(),
            )),
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

struct Extractor<'a> {
    schema: &'a DatabaseSchema,
    ctes: Vec<HashMap<String, Option<Vec<String>>>>,
    out: GoldColumns,
}

fn last_ident(name: &ObjectName) -> String {
    name.0
        .last()
        .and_then(|p| p.as_ident())
        .map(|i| normalize_ident(&i.value))
        .unwrap_or_default()
}

impl Extractor<'_> {
    fn table_columns(&self, table: &str) -> Vec<String> {
        self.schema
            .table(table)
            .map(|t| t.columns.iter().map(|c| normalize_ident(&c.name)).collect())
            .unwrap_or_default()
    }

    fn has_column(&self, table: &str, column: &str) -> bool {
        self.schema
            .table(table)
            .is_some_and(|t| t.columns.iter().any(|c| normalize_ident(&c.name) == column))
    }

    /// Output column names of the query.
    fn query(&mut self, q: &Query, outer: &[Scope]) -> Option<Vec<String>> {
        self.ctes.push(HashMap::new());
        if let Some(with) = &q.with {
            for cte in &with.cte_tables {
                let mut cols = self.query(&cte.query, outer);
                if !cte.alias.columns.is_empty() {
                    cols = Some(cte.alias.columns.iter().map(|c| normalize_ident(&c.name.value)).collect());
                }
                let name = normalize_ident(&cte.alias.name.value);
                if let Some(top) = self.ctes.last_mut() {
                    top.insert(name, cols);
                }
            }
        }
        let (cols, scope) = self.set_expr(&q.body, outer);
        if let Some(ob) = &q.order_by {
            if let OrderByKind::Expressions(items) = &ob.kind {
                let scope = scope.unwrap_or_default();
                for item in items {
                    self.expr(&item.expr, &scope, outer);
                }
            }
        }
        self.ctes.pop();
        cols
    }

    fn set_expr(&mut self, body: &SetExpr, outer: &[Scope]) -> (Option<Vec<String>>, Option<Scope>) {
        match body {
            SetExpr::Select(s) => {
                let (cols, scope) = self.select(s, outer);
                (cols, Some(scope))
            }
            SetExpr::Query(q) => (self.query(q, outer), None),
            SetExpr::SetOperation { left, right, .. } => {
                let (cols, _) = self.set_expr(left, outer);
                self.set_expr(right, outer);
                // ORDER BY after a compound select names output columns
                let scope = Scope {
                    bindings: Vec::new(),
                    aliases: cols.clone().unwrap_or_default().into_iter().collect(),
                };
                (cols, Some(scope))
            }
            _ => (None, None),
        }
    }

    fn bind_relation(&mut self, factor: &TableFactor, scope: &mut Scope, outer: &[Scope]) {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                let table = last_ident(name);
                let binding = alias
                    .as_ref()
                    .map(|a| normalize_ident(&a.name.value))
                    .unwrap_or_else(|| table.clone());
                let cte = self.ctes.iter().rev().find_map(|f| f.get(&table).cloned());
                let source = if let Some(cols) = cte {
                    Source::Derived(cols)
                } else if self.schema.table(&table).is_some() {
                    Source::Base(normalize_ident(&self.schema.table(&table).map(|t| t.name.clone()).unwrap_or(table)))
                } else {
                    self.out.unresolved.insert(table);
                    Source::Derived(None)
                };
                scope.bindings.push((binding, source));
            }
            TableFactor::Derived {
                subquery, alias, lateral, ..
            } => {
                let mut chain: Vec<Scope> = Vec::new();
                if *lateral {
                    chain.push(scope.clone());
                }
                chain.extend(outer.iter().cloned());
                let mut cols = self.query(subquery, &chain);
                if let Some(a) = alias {
                    if !a.columns.is_empty() {
                        cols = Some(a.columns.iter().map(|c| normalize_ident(&c.name.value)).collect());
                    }
                    scope
                        .bindings
                        .push((normalize_ident(&a.name.value), Source::Derived(cols)));
                } else {
                    scope.bindings.push((String::new(), Source::Derived(cols)));
                }
            }
            TableFactor::NestedJoin {
                table_with_joins,
                alias,
            } => {
                let mut inner = Scope::default();
                self.table_with_joins(table_with_joins, &mut inner, outer);
                if let Some(a) = alias {
                    let cols: Vec<String> = inner
                        .bindings
                        .iter()
                        .flat_map(|(_, s)| match s {
                            Source::Base(t) => self.table_columns(t),
                            Source::Derived(c) => c.clone().unwrap_or_default(),
                        })
                        .collect();
                    scope
                        .bindings
                        .push((normalize_ident(&a.name.value), Source::Derived(Some(cols))));
                }
                scope.bindings.extend(inner.bindings);
            }
            other => {
                // table functions and the like: resolve their arguments only
                let mut v = ExprRefs::default();
                let _ = other.visit(&mut v);
                self.resolve_collected(v, scope, outer);
                scope.bindings.push((String::new(), Source::Derived(None)));
            }
        }
    }

    fn table_with_joins(&mut self, twj: &TableWithJoins, scope: &mut Scope, outer: &[Scope]) {
        self.bind_relation(&twj.relation, scope, outer);
        for join in &twj.joins {
            let before = scope.bindings.len();
            self.bind_relation(&join.relation, scope, outer);
            let Some(constraint) = join_constraint(&join.join_operator) else {
                continue;
            };
            match constraint {
                JoinConstraint::On(e) => self.expr(e, scope, outer),
                JoinConstraint::Using(names) => {
                    for n in names {
                        let col = last_ident(n);
                        self.include_everywhere(&col, scope);
                    }
                }
                JoinConstraint::Natural => {
                    let left: BTreeSet<String> = self.binding_columns(&scope.bindings[..before]);
                    let right: BTreeSet<String> = self.binding_columns(&scope.bindings[before..]);
                    for col in left.intersection(&right) {
                        self.include_everywhere(col, scope);
                    }
                }
                JoinConstraint::None => {}
            }
        }
    }

    fn binding_columns(&self, bindings: &[(String, Source)]) -> BTreeSet<String> {
        bindings
            .iter()
            .flat_map(|(_, s)| match s {
                Source::Base(t) => self.table_columns(t),
                Source::Derived(c) => c.clone().unwrap_or_default(),
            })
            .collect()
    }

    fn include_everywhere(&mut self, col: &str, scope: &Scope) {
        for (_, s) in &scope.bindings {
            if let Source::Base(t) = s {
                if self.has_column(t, col) {
                    self.out.refs.insert(ColumnRef::new(t, col));
                }
            }
        }
    }

    fn select(&mut self, s: &Select, outer: &[Scope]) -> (Option<Vec<String>>, Scope) {
        let mut scope = Scope::default();
        for twj in &s.from {
            self.table_with_joins(twj, &mut scope, outer);
        }
        for item in &s.projection {
            if let SelectItem::ExprWithAlias { alias, .. } = item {
                scope.aliases.insert(normalize_ident(&alias.value));
            }
        }
        let mut cols = Vec::new();
        let mut known = true;
        for item in &s.projection {
            match item {
                SelectItem::UnnamedExpr(e) => {
                    self.expr(e, &scope, outer);
                    cols.push(match e {
                        Expr::Identifier(i) => normalize_ident(&i.value),
                        Expr::CompoundIdentifier(p) => {
                            p.last().map(|i| normalize_ident(&i.value)).unwrap_or_default()
                        }
                        other => other.to_string().to_lowercase(),
                    });
                }
                SelectItem::ExprWithAlias { expr, alias } => {
                    self.expr(expr, &scope, outer);
                    cols.push(normalize_ident(&alias.value));
                }
                SelectItem::Wildcard(_) => {
                    for (_, src) in scope.bindings.clone() {
                        known &= self.expand_star(&src, &mut cols);
                    }
                }
                SelectItem::QualifiedWildcard(kind, _) => match kind {
                    SelectItemQualifiedWildcardKind::ObjectName(name) => {
                        let q = last_ident(name);
                        match lookup(&q, &scope, outer) {
                            Some(src) => known &= self.expand_star(&src, &mut cols),
                            None => {
                                self.out.unresolved.insert(format!("{q}.*"));
                                known = false;
                            }
                        }
                    }
                    SelectItemQualifiedWildcardKind::Expr(e) => {
                        self.expr(e, &scope, outer);
                        known = false;
                    }
                },
            }
        }
        let mut exprs: Vec<&Expr> = Vec::new();
        exprs.extend(s.prewhere.iter());
        exprs.extend(s.selection.iter());
        if let GroupByExpr::Expressions(g, _) = &s.group_by {
            exprs.extend(g.iter());
        }
        exprs.extend(s.having.iter());
        exprs.extend(s.qualify.iter());
        exprs.extend(s.sort_by.iter().map(|o| &o.expr));
        for e in exprs {
            self.expr(e, &scope, outer);
        }
        (known.then_some(cols), scope)
    }

    /// Adds the star's columns (and refs for base tables). Returns false when
    /// the expansion is unknown.
    fn expand_star(&mut self, src: &Source, cols: &mut Vec<String>) -> bool {
        match src {
            Source::Base(t) => {
                for c in self.table_columns(t) {
                    self.out.refs.insert(ColumnRef::new(t, &c));
                    cols.push(c);
                }
                true
            }
            Source::Derived(Some(c)) => {
                cols.extend(c.iter().cloned());
                true
            }
            Source::Derived(None) => false,
        }
    }

    fn expr(&mut self, e: &Expr, scope: &Scope, outer: &[Scope]) {
        let mut v = ExprRefs::default();
        let _ = e.visit(&mut v);
        self.resolve_collected(v, scope, outer);
    }

    fn resolve_collected(&mut self, v: ExprRefs, scope: &Scope, outer: &[Scope]) {
        for r in v.refs {
            match r {
                RawRef::Bare(c) => self.resolve_bare(&c, scope, outer),
                RawRef::Qualified(parts) => self.resolve_qualified(&parts, scope, outer),
            }
        }
        if !v.nested.is_empty() {
            let mut chain = vec![scope.clone()];
            chain.extend(outer.iter().cloned());
            for q in &v.nested {
                self.query(q, &chain);
            }
        }
    }

    fn resolve_bare(&mut self, col: &str, scope: &Scope, outer: &[Scope]) {
        for s in std::iter::once(scope).chain(outer.iter()) {
            let bases: Vec<String> = s
                .bindings
                .iter()
                .filter_map(|(_, src)| match src {
                    Source::Base(t) if self.has_column(t, col) => Some(t.clone()),
                    _ => None,
                })
                .collect();
            if !bases.is_empty() {
                let distinct: BTreeSet<&String> = bases.iter().collect();
                if distinct.len() > 1 {
                    self.out.ambiguous.insert(col.to_string());
                }
                for t in distinct {
                    self.out.refs.insert(ColumnRef::new(t, col));
                }
                return;
            }
            let derived = s.bindings.iter().any(|(_, src)| match src {
                Source::Derived(None) => true,
                Source::Derived(Some(cols)) => cols.iter().any(|c| c == col),
                Source::Base(_) => false,
            });
            if derived || s.aliases.contains(col) {
                return;
            }
        }
        self.out.unresolved.insert(col.to_string());
    }

    fn resolve_qualified(&mut self, parts: &[String], scope: &Scope, outer: &[Scope]) {
        let [.., qualifier, col] = parts else {
            return;
        };
        match lookup(qualifier, scope, outer) {
            Some(Source::Base(t)) => {
                if self.has_column(&t, col) {
                    self.out.refs.insert(ColumnRef::new(&t, col));
                } else {
                    self.out.unresolved.insert(format!("{qualifier}.{col}"));
                }
            }
            Some(Source::Derived(_)) => {}
            None => {
                self.out.unresolved.insert(format!("{qualifier}.{col}"));
            }
        }
    }
}

fn lookup(name: &str, scope: &Scope, outer: &[Scope]) -> Option<Source> {
    std::iter::once(scope)
        .chain(outer.iter())
        .find_map(|s| s.bindings.iter().rev().find(|(b, _)| b == name).map(|(_, src)| src.clone()))
}

fn join_constraint(op: &JoinOperator) -> Option<&JoinConstraint> {
    use JoinOperator::*;
    match op {
        Join(c) | Inner(c) | Left(c) | LeftOuter(c) | Right(c) | RightOuter(c) | FullOuter(c)
        | Semi(c) | LeftSemi(c) | RightSemi(c) | Anti(c) | LeftAnti(c) | RightAnti(c)
        | StraightJoin(c) => Some(c),
        AsOf { constraint, .. } => Some(constraint),
        CrossJoin | CrossApply | OuterApply => None,
    }
}

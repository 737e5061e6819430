//! Lowering from the parsed SQL subset to the engine's plan IR.
//!
//! Selections split into per-table filters and join conditions, IN becomes
//! a semi-join, GROUP BY becomes the sort + odd-even aggregation operator,
//! and the `row_no() OVER (PARTITION BY ..)` pattern becomes a sort plus an
//! adjacent-pair selection — a self-join on row numbers would have to
//! materialize the cartesian product, which oblivious evaluation cannot
//! afford.

use std::collections::BTreeMap;

use thiserror::Error;

use obliq_core::operators::{AggFunc, AggSpec, AGG2_COL, AGG_COL, AGG_COUNT_COL};
use obliq_core::plan::{Catalog, Plan, PlanSortKey, QueryPlan};
use obliq_core::predicate::{CmpOp, Expr, Predicate};

use crate::sql::{AggName, QuerySpec, SelectItem, SqlCmp, SqlExpr, SqlPredicate, TableRef};
use crate::values::encode_literal;

#[derive(Debug, Error)]
pub enum LowerError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),
    #[error("unsupported query shape: {0}")]
    Unsupported(String),
    #[error("strict mode: {0} is neither an aggregate, a group key, nor a distinct column")]
    StrictMode(String),
}

/// Result of lowering: the initial (unoptimized) plan, the query-local
/// catalog keyed by alias, and how each alias maps onto a base table.
pub struct Lowered {
    pub plan: QueryPlan,
    pub catalog: Catalog,
    /// alias -> (base table, base columns in alias-column order)
    pub bindings: BTreeMap<String, (String, Vec<String>)>,
    /// presentation names of the output columns
    pub output_names: Vec<String>,
}

struct Scope {
    /// alias -> column names as they appear in the plan
    tables: BTreeMap<String, Vec<String>>,
    qualify: bool,
}

impl Scope {
    fn resolve(&self, name: &str) -> Result<String, LowerError> {
        if let Some((alias, col)) = name.split_once('.') {
            let cols = self
                .tables
                .get(alias)
                .ok_or_else(|| LowerError::UnknownTable(alias.to_string()))?;
            let plan_name = self.plan_col(alias, col);
            if cols.iter().any(|c| c == &plan_name) {
                return Ok(plan_name);
            }
            return Err(LowerError::UnknownColumn(name.to_string()));
        }
        let mut hits = Vec::new();
        for (alias, cols) in &self.tables {
            let plan_name = self.plan_col(alias, name);
            if cols.iter().any(|c| c == &plan_name) {
                hits.push(plan_name);
            }
        }
        match hits.len() {
            0 => Err(LowerError::UnknownColumn(name.to_string())),
            1 => Ok(hits.pop().unwrap()),
            _ => Err(LowerError::AmbiguousColumn(name.to_string())),
        }
    }

    fn plan_col(&self, alias: &str, col: &str) -> String {
        if self.qualify {
            format!("{alias}.{col}")
        } else {
            col.to_string()
        }
    }

    /// Aliases whose columns the predicate touches.
    fn tables_of(&self, cols: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for (alias, table_cols) in &self.tables {
            if cols.iter().any(|c| table_cols.contains(c)) {
                out.push(alias.clone());
            }
        }
        out
    }
}

/// Base-table schemas and live row counts, as known to the data owners.
pub struct SchemaInfo {
    pub columns: BTreeMap<String, Vec<String>>,
    pub rows: BTreeMap<String, usize>,
}

pub fn lower(q: &QuerySpec, schemas: &SchemaInfo, strict: bool) -> Result<Lowered, LowerError> {
    // the one window-function pattern gets its dedicated lowering
    if let Some((name, sub)) = &q.with {
        if sub
            .items
            .iter()
            .any(|i| matches!(i, SelectItem::RowNumber { .. }))
        {
            return lower_row_number_pattern(q, name, sub, schemas, strict);
        }
    }
    if q.with.is_some() {
        return Err(LowerError::Unsupported(
            "WITH is only supported for the row_no window pattern".into(),
        ));
    }
    lower_select(q, schemas, strict)
}

fn lower_select(q: &QuerySpec, schemas: &SchemaInfo, strict: bool) -> Result<Lowered, LowerError> {
    // derived-table input (FROM (SELECT ...) alias)
    if q.from.len() == 1 {
        if let Some(sub) = &q.from[0].subquery {
            return lower_over_subquery(q, &q.from[0], sub, schemas, strict);
        }
    }
    if q.from.iter().any(|t| t.subquery.is_some()) {
        return Err(LowerError::Unsupported(
            "derived tables are only supported as the sole FROM entry".into(),
        ));
    }

    let qualify = q.from.len() > 1;
    let mut scope = Scope {
        tables: BTreeMap::new(),
        qualify,
    };
    let mut catalog = Catalog::default();
    let mut bindings = BTreeMap::new();
    let mut scans: BTreeMap<String, Plan> = BTreeMap::new();
    for t in &q.from {
        let alias = t.alias.clone().unwrap_or_else(|| t.table.clone());
        let base_cols = schemas
            .columns
            .get(&t.table)
            .ok_or_else(|| LowerError::UnknownTable(t.table.clone()))?;
        let plan_cols: Vec<String> = base_cols
            .iter()
            .map(|c| scope.plan_col(&alias, c))
            .collect();
        let rows = *schemas.rows.get(&t.table).unwrap_or(&0);
        catalog.add(
            &alias,
            rows,
            &plan_cols.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        );
        bindings.insert(alias.clone(), (t.table.clone(), base_cols.clone()));
        scope.tables.insert(alias.clone(), plan_cols);
        scans.insert(alias.clone(), Plan::Scan { table: alias.clone() });
    }

    // split WHERE into per-table filters, join atoms, and semi-joins
    let mut atoms: Vec<SqlPredicate> = Vec::new();
    if let Some(w) = &q.where_clause {
        flatten_and(w, &mut atoms);
    }
    for j in &q.join_on {
        flatten_and(j, &mut atoms);
    }
    let mut per_table: BTreeMap<String, Vec<Predicate>> = BTreeMap::new();
    let mut cross: Vec<Predicate> = Vec::new();
    let mut semis: Vec<(String, String, String)> = Vec::new(); // (left col, table, alias col)
    for atom in &atoms {
        if let SqlPredicate::In { col, table } = atom {
            let left = scope.resolve(col)?;
            semis.push((left, table.clone(), col.clone()));
            continue;
        }
        let p = lower_predicate(atom, &scope)?;
        let cols = p.columns();
        let touched = scope.tables_of(&cols);
        match touched.len() {
            0 | 1 => {
                let key = touched
                    .first()
                    .cloned()
                    .unwrap_or_else(|| scope.tables.keys().next().unwrap().clone());
                per_table.entry(key).or_default().push(p);
            }
            _ => cross.push(p),
        }
    }

    // scans + per-table selections
    let mut nodes: BTreeMap<String, Plan> = BTreeMap::new();
    for (alias, scan) in scans {
        let node = match per_table.remove(&alias) {
            Some(preds) => Plan::Select {
                input: Box::new(scan),
                predicate: Predicate::and(preds),
                fused: true,
            },
            None => scan,
        };
        nodes.insert(alias, node);
    }

    // IN <table>: a semi-join against the named base table
    let mut order: Vec<String> = q
        .from
        .iter()
        .map(|t| t.alias.clone().unwrap_or_else(|| t.table.clone()))
        .collect();
    let first = order.remove(0);
    let mut root = nodes.remove(&first).unwrap();
    for (left_col, table, _) in &semis {
        let base_cols = schemas
            .columns
            .get(table)
            .ok_or_else(|| LowerError::UnknownTable(table.clone()))?;
        if base_cols.is_empty() {
            return Err(LowerError::UnknownTable(table.clone()));
        }
        let inner_alias = format!("{table}~in");
        let inner_cols: Vec<String> = base_cols.iter().map(|c| format!("{inner_alias}.{c}")).collect();
        catalog.add(
            &inner_alias,
            *schemas.rows.get(table).unwrap_or(&0),
            &inner_cols.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        );
        bindings.insert(inner_alias.clone(), (table.clone(), base_cols.clone()));
        root = Plan::SemiJoin {
            left: Box::new(root),
            right: Box::new(Plan::Scan {
                table: inner_alias.clone(),
            }),
            predicate: Predicate::Cmp(
                CmpOp::Eq,
                Expr::col(left_col),
                Expr::col(&inner_cols[0]),
            ),
            partial: None,
            fused: true,
        };
    }

    // remaining tables: left-deep joins, each taking the cross-table
    // atoms that become resolvable once its input joins in
    let mut joined: Vec<String> = vec![first.clone()];
    for alias in order {
        let right = nodes.remove(&alias).unwrap();
        joined.push(alias.clone());
        let mut applicable = Vec::new();
        let mut rest = Vec::new();
        for p in std::mem::take(&mut cross) {
            let cols = p.columns();
            let tables = scope.tables_of(&cols);
            if tables.iter().all(|t| joined.contains(t)) {
                applicable.push(p);
            } else {
                rest.push(p);
            }
        }
        cross = rest;
        let predicate = if applicable.is_empty() {
            Predicate::Const(true)
        } else {
            Predicate::and(applicable)
        };
        root = Plan::Join {
            left: Box::new(root),
            right: Box::new(right),
            predicate,
            fused: true,
        };
    }
    if !cross.is_empty() {
        root = Plan::Select {
            input: Box::new(root),
            predicate: Predicate::and(std::mem::take(&mut cross)),
            fused: true,
        };
    }

    finish_query(q, root, &scope, catalog, bindings, strict)
}

/// Everything above the joined/filtered input: grouping, having, distinct,
/// global aggregates, ordering, projection, masking.
fn finish_query(
    q: &QuerySpec,
    mut root: Plan,
    scope: &Scope,
    catalog: Catalog,
    bindings: BTreeMap<String, (String, Vec<String>)>,
    strict: bool,
) -> Result<Lowered, LowerError> {
    let mut output_cols: Vec<String> = Vec::new();
    let mut output_names: Vec<String> = Vec::new();
    let mut alias_map: BTreeMap<String, String> = BTreeMap::new(); // alias -> plan col

    // group keys
    let group_keys: Vec<String> = q
        .group_by
        .iter()
        .flat_map(|g| g.split('\u{1}'))
        .map(|g| scope.resolve(g))
        .collect::<Result<_, _>>()?;

    // select items
    let mut agg_spec: Option<AggSpec> = None;
    let mut count_distinct: Option<String> = None;
    let mut plain_cols: Vec<(String, String)> = Vec::new(); // (plan col, display)
    let mut minmax: Vec<(AggFunc, String, Option<String>)> = Vec::new();
    for item in &q.items {
        match item {
            SelectItem::Column { name, alias } => {
                let col = scope.resolve(name)?;
                plain_cols.push((col.clone(), alias.clone().unwrap_or_else(|| name.clone())));
                if let Some(a) = alias {
                    alias_map.insert(a.clone(), col);
                }
            }
            SelectItem::Aggregate {
                func,
                arg,
                distinct,
                alias,
            } => {
                if *distinct {
                    if *func != AggName::Count {
                        return Err(LowerError::Unsupported(
                            "DISTINCT inside aggregates other than COUNT".into(),
                        ));
                    }
                    let col = scope.resolve(arg.as_deref().ok_or_else(|| {
                        LowerError::Unsupported("COUNT(DISTINCT *) makes no sense".into())
                    })?)?;
                    count_distinct = Some(col);
                    if let Some(a) = alias {
                        alias_map.insert(a.clone(), AGG_COL.to_string());
                    }
                    continue;
                }
                let target = match arg {
                    Some(c) => Some(scope.resolve(c)?),
                    None => None,
                };
                let func = match func {
                    AggName::Count => AggFunc::Count,
                    AggName::Sum => AggFunc::Sum,
                    AggName::Min => AggFunc::Min,
                    AggName::Max => AggFunc::Max,
                    AggName::Avg => AggFunc::Avg,
                };
                minmax.push((func, target.clone().unwrap_or_default(), alias.clone()));
            }
            SelectItem::RowNumber { .. } => {
                return Err(LowerError::Unsupported(
                    "row_no() outside the WITH pattern".into(),
                ));
            }
        }
    }

    // MIN and MAX of the same column pair up into one two-output pass
    match minmax.len() {
        0 => {}
        1 => {
            let (func, target, alias) = minmax.pop().unwrap();
            if let Some(a) = alias {
                alias_map.insert(a, AGG_COL.to_string());
            }
            agg_spec = Some(AggSpec {
                func,
                target: if target.is_empty() { None } else { Some(target) },
                dual: false,
            });
        }
        2 => {
            let ((f1, t1, a1), (f2, t2, a2)) = {
                let b = minmax.pop().unwrap();
                let a = minmax.pop().unwrap();
                (a, b)
            };
            let ok = t1 == t2
                && matches!(
                    (f1, f2),
                    (AggFunc::Min, AggFunc::Max) | (AggFunc::Max, AggFunc::Min)
                );
            if !ok {
                return Err(LowerError::Unsupported(
                    "multiple aggregates are only supported as MIN and MAX of one column".into(),
                ));
            }
            let (min_alias, max_alias) = if f1 == AggFunc::Min { (a1, a2) } else { (a2, a1) };
            if let Some(a) = min_alias {
                alias_map.insert(a, AGG_COL.to_string());
            }
            if let Some(a) = max_alias {
                alias_map.insert(a, AGG2_COL.to_string());
            }
            agg_spec = Some(AggSpec {
                func: AggFunc::MinMax,
                target: Some(t1),
                dual: false,
            });
        }
        _ => {
            return Err(LowerError::Unsupported(
                "more than two aggregate outputs".into(),
            ));
        }
    }

    // strict mode: a plain output must be a group key, or the query must
    // be a pure DISTINCT over its outputs
    if strict {
        let has_agg = agg_spec.is_some() || count_distinct.is_some();
        for (col, _) in &plain_cols {
            let ok = group_keys.contains(col) || (q.distinct && !has_agg);
            if !ok {
                return Err(LowerError::StrictMode(col.clone()));
            }
        }
    }

    let ordered = !q.order_by.is_empty();
    if !group_keys.is_empty() {
        let agg = agg_spec.clone().unwrap_or(AggSpec {
            func: AggFunc::Count,
            target: None,
            dual: false,
        });
        root = Plan::GroupBy {
            input: Box::new(root),
            keys: group_keys.clone(),
            agg,
            suppress_shuffle: ordered,
        };
    } else if let Some(col) = &count_distinct {
        root = Plan::Distinct {
            input: Box::new(root),
            keys: vec![col.clone()],
            fused: true,
        };
        root = Plan::GlobalAgg {
            input: Box::new(root),
            agg: AggSpec {
                func: AggFunc::Count,
                target: None,
                dual: false,
            },
        };
    } else if let Some(agg) = &agg_spec {
        root = Plan::GlobalAgg {
            input: Box::new(root),
            agg: agg.clone(),
        };
    }

    // HAVING: a selection over the aggregate column
    if let Some(h) = &q.having {
        let resolver = HavingScope {
            scope,
            alias_map: &alias_map,
        };
        let p = lower_predicate_with(h, &|name| resolver.resolve(name))?;
        root = Plan::Select {
            input: Box::new(root),
            predicate: p,
            fused: true,
        };
    }

    if q.distinct && group_keys.is_empty() && count_distinct.is_none() && agg_spec.is_none() {
        root = Plan::Distinct {
            input: Box::new(root),
            keys: plain_cols.iter().map(|(c, _)| c.clone()).collect(),
            fused: true,
        };
    }

    // ORDER BY with deterministic tie-breaking on the visible columns
    if ordered {
        let mut keys: Vec<PlanSortKey> = Vec::new();
        for (name, desc) in &q.order_by {
            let col = alias_map
                .get(name)
                .cloned()
                .or_else(|| scope.resolve(name).ok())
                .ok_or_else(|| LowerError::UnknownColumn(name.clone()))?;
            keys.push(PlanSortKey { col, desc: *desc });
        }
        for (col, _) in &plain_cols {
            if !keys.iter().any(|k| &k.col == col) {
                keys.push(PlanSortKey {
                    col: col.clone(),
                    desc: false,
                });
            }
        }
        root = Plan::OrderBy {
            input: Box::new(root),
            keys,
            limit: q.limit,
            gates_first: true,
        };
    }

    // visible columns
    for (col, display) in &plain_cols {
        output_cols.push(col.clone());
        output_names.push(display.clone());
    }
    if !output_cols.is_empty() {
        root = Plan::Project {
            input: Box::new(root),
            cols: output_cols.clone(),
        };
    }
    if agg_spec.is_some() || count_distinct.is_some() {
        for item in &q.items {
            if let SelectItem::Aggregate { func, arg, alias, distinct } = item {
                let display = alias.clone().unwrap_or_else(|| {
                    let inner = if *distinct {
                        format!("DISTINCT {}", arg.clone().unwrap_or_default())
                    } else {
                        arg.clone().unwrap_or_else(|| "*".to_string())
                    };
                    format!("{func}({inner})")
                });
                output_names.push(display);
                if *func == AggName::Avg {
                    output_names.push("count".to_string());
                }
            }
        }
    }

    root = Plan::Open {
        input: Box::new(Plan::Mask {
            input: Box::new(root),
        }),
    };
    Ok(Lowered {
        plan: QueryPlan::new(root),
        catalog,
        bindings,
        output_names,
    })
}

struct HavingScope<'a> {
    scope: &'a Scope,
    alias_map: &'a BTreeMap<String, String>,
}

impl HavingScope<'_> {
    fn resolve(&self, name: &str) -> Result<String, LowerError> {
        if let Some(c) = self.alias_map.get(name) {
            return Ok(c.clone());
        }
        self.scope.resolve(name)
    }
}

fn flatten_and(p: &SqlPredicate, out: &mut Vec<SqlPredicate>) {
    match p {
        SqlPredicate::And(ps) => ps.iter().for_each(|q| flatten_and(q, out)),
        other => out.push(other.clone()),
    }
}

fn lower_predicate(p: &SqlPredicate, scope: &Scope) -> Result<Predicate, LowerError> {
    lower_predicate_with(p, &|name| scope.resolve(name))
}

fn lower_predicate_with(
    p: &SqlPredicate,
    resolve: &dyn Fn(&str) -> Result<String, LowerError>,
) -> Result<Predicate, LowerError> {
    Ok(match p {
        SqlPredicate::Cmp(op, a, b) => Predicate::Cmp(
            lower_cmp(*op),
            lower_expr(a, resolve)?,
            lower_expr(b, resolve)?,
        ),
        SqlPredicate::In { .. } => {
            return Err(LowerError::Unsupported(
                "IN is only supported as a top-level conjunct".into(),
            ))
        }
        SqlPredicate::And(ps) => Predicate::And(
            ps.iter()
                .map(|q| lower_predicate_with(q, resolve))
                .collect::<Result<_, _>>()?,
        ),
        SqlPredicate::Or(ps) => Predicate::Or(
            ps.iter()
                .map(|q| lower_predicate_with(q, resolve))
                .collect::<Result<_, _>>()?,
        ),
        SqlPredicate::Not(q) => Predicate::Not(Box::new(lower_predicate_with(q, resolve)?)),
    })
}

fn lower_cmp(op: SqlCmp) -> CmpOp {
    match op {
        SqlCmp::Eq => CmpOp::Eq,
        SqlCmp::Ne => CmpOp::Ne,
        SqlCmp::Lt => CmpOp::Lt,
        SqlCmp::Le => CmpOp::Le,
        SqlCmp::Gt => CmpOp::Gt,
        SqlCmp::Ge => CmpOp::Ge,
    }
}

fn lower_expr(
    e: &SqlExpr,
    resolve: &dyn Fn(&str) -> Result<String, LowerError>,
) -> Result<Expr, LowerError> {
    Ok(match e {
        SqlExpr::Col(c) => Expr::Col(resolve(c)?),
        SqlExpr::Int(v) => Expr::Const(*v as u64),
        SqlExpr::Str(s) => Expr::Const(encode_literal(s)),
        SqlExpr::Agg(..) => {
            // inside HAVING: the aggregate refers to the group accumulator
            Expr::Col(AGG_COL.to_string())
        }
        SqlExpr::Add(a, b) => Expr::Add(
            Box::new(lower_expr(a, resolve)?),
            Box::new(lower_expr(b, resolve)?),
        ),
        SqlExpr::Sub(a, b) => Expr::Sub(
            Box::new(lower_expr(a, resolve)?),
            Box::new(lower_expr(b, resolve)?),
        ),
        SqlExpr::Mul(a, b) => Expr::Mul(
            Box::new(lower_expr(a, resolve)?),
            Box::new(lower_expr(b, resolve)?),
        ),
    })
}

/// `row_no() OVER (PARTITION BY p ORDER BY o)` with a self-join on
/// `row_no = row_no + 1`: sort on (p, o) once and compare adjacent rows.
fn lower_row_number_pattern(
    q: &QuerySpec,
    with_name: &str,
    sub: &QuerySpec,
    schemas: &SchemaInfo,
    strict: bool,
) -> Result<Lowered, LowerError> {
    let (partition, order) = sub
        .items
        .iter()
        .find_map(|i| match i {
            SelectItem::RowNumber { partition, order } => {
                Some((partition.clone(), order.clone()))
            }
            _ => None,
        })
        .unwrap();
    if sub.from.len() != 1 || sub.from[0].subquery.is_some() {
        return Err(LowerError::Unsupported(
            "window subquery must scan one base table".into(),
        ));
    }
    let base = &sub.from[0].table;
    let base_cols = schemas
        .columns
        .get(base)
        .ok_or_else(|| LowerError::UnknownTable(base.clone()))?
        .clone();
    // the outer query must self-join the CTE on the partition key with
    // adjacent row numbers
    let aliases: Vec<String> = q
        .from
        .iter()
        .map(|t| {
            if &t.table != with_name {
                return Err(LowerError::Unsupported(
                    "row_no pattern: outer FROM must reference the CTE".into(),
                ));
            }
            Ok(t.alias.clone().unwrap_or_else(|| t.table.clone()))
        })
        .collect::<Result<_, _>>()?;
    if aliases.len() != 2 {
        return Err(LowerError::Unsupported(
            "row_no pattern: expected a two-way self join".into(),
        ));
    }
    let (first, second) = (&aliases[0], &aliases[1]);

    let mut catalog = Catalog::default();
    catalog.add(
        base,
        *schemas.rows.get(base).unwrap_or(&0),
        &base_cols.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    );
    let mut bindings = BTreeMap::new();
    bindings.insert(base.clone(), (base.clone(), base_cols.clone()));
    let scope = Scope {
        tables: BTreeMap::from([(base.clone(), base_cols.clone())]),
        qualify: false,
    };

    let mut root = Plan::Scan {
        table: base.clone(),
    };
    // the CTE's filter: evaluated as a flag, fused into the pair predicate
    let mut flag_bit: Option<Predicate> = None;
    if let Some(w) = &sub.where_clause {
        let p = lower_predicate(w, &scope)?;
        root = Plan::Select {
            input: Box::new(root),
            predicate: p,
            fused: true,
        };
        flag_bit = Some(Predicate::Bit("a_phi".to_string()));
    }
    // rows that pass the filter must form contiguous, order-sorted runs
    // within each partition, so the filter bit sorts between the keys
    let mut sort_keys = vec![PlanSortKey {
        col: partition.clone(),
        desc: false,
    }];
    if flag_bit.is_some() {
        sort_keys.push(PlanSortKey {
            col: "a_phi".to_string(),
            desc: true,
        });
    }
    sort_keys.push(PlanSortKey {
        col: order.clone(),
        desc: false,
    });
    root = Plan::OrderBy {
        input: Box::new(root),
        keys: sort_keys,
        limit: None,
        gates_first: false,
    };

    // outer WHERE: r2.x - r1.x atoms become (next.x - x); the row-number
    // adjacency atom is what the pair structure encodes
    let mut pair_atoms: Vec<Predicate> = vec![Predicate::Cmp(
        CmpOp::Eq,
        Expr::col(&partition),
        Expr::Col(format!("next.{partition}")),
    )];
    if let Some(b) = &flag_bit {
        pair_atoms.push(b.clone());
        pair_atoms.push(Predicate::Bit("next.a_phi".to_string()));
    }
    let mut atoms = Vec::new();
    if let Some(w) = &q.where_clause {
        flatten_and(w, &mut atoms);
    }
    for j in &q.join_on {
        flatten_and(j, &mut atoms);
    }
    for atom in &atoms {
        if is_row_no_adjacency(atom, first, second) || is_partition_join(atom, &partition) {
            continue;
        }
        let rewritten = lower_predicate_with(atom, &|name| {
            let (alias, col) = name
                .split_once('.')
                .ok_or_else(|| LowerError::UnknownColumn(name.to_string()))?;
            if !base_cols.iter().any(|c| c == col) {
                return Err(LowerError::UnknownColumn(name.to_string()));
            }
            if alias == first.as_str() {
                Ok(col.to_string())
            } else if alias == second.as_str() {
                Ok(format!("next.{col}"))
            } else {
                Err(LowerError::UnknownTable(alias.to_string()))
            }
        })?;
        pair_atoms.push(rewritten);
    }
    root = Plan::AdjacentSelect {
        input: Box::new(root),
        predicate: Predicate::and(pair_atoms),
        fused: true,
    };

    // SELECT DISTINCT <col> over the qualifying rows
    let mut out_cols = Vec::new();
    for item in &q.items {
        match item {
            SelectItem::Column { name, .. } => {
                let bare = name.split_once('.').map(|(_, c)| c).unwrap_or(name);
                out_cols.push(scope.resolve(bare)?);
            }
            _ => {
                return Err(LowerError::Unsupported(
                    "row_no pattern: output must be plain columns".into(),
                ))
            }
        }
    }
    if strict && !q.distinct {
        return Err(LowerError::StrictMode(out_cols.join(",")));
    }
    if q.distinct {
        root = Plan::Distinct {
            input: Box::new(root),
            keys: out_cols.clone(),
            fused: true,
        };
    }
    root = Plan::Open {
        input: Box::new(Plan::Mask {
            input: Box::new(Plan::Project {
                input: Box::new(root),
                cols: out_cols.clone(),
            }),
        }),
    };
    Ok(Lowered {
        plan: QueryPlan::new(root),
        catalog,
        bindings,
        output_names: out_cols,
    })
}

fn is_row_no_adjacency(atom: &SqlPredicate, a1: &str, a2: &str) -> bool {
    if let SqlPredicate::Cmp(SqlCmp::Eq, l, r) = atom {
        let is_rowno = |e: &SqlExpr| -> bool {
            matches!(e, SqlExpr::Col(c) if c == &format!("{a1}.row_no") || c == &format!("{a2}.row_no"))
        };
        let is_rowno_plus1 = |e: &SqlExpr| -> bool {
            matches!(e, SqlExpr::Add(a, b)
                if is_rowno(a) && matches!(b.as_ref(), SqlExpr::Int(1)))
        };
        return (is_rowno(l) && is_rowno_plus1(r)) || (is_rowno_plus1(l) && is_rowno(r));
    }
    false
}

fn is_partition_join(atom: &SqlPredicate, partition: &str) -> bool {
    if let SqlPredicate::Cmp(SqlCmp::Eq, SqlExpr::Col(l), SqlExpr::Col(r)) = atom {
        let bare = |s: &str| s.split_once('.').map(|(_, c)| c.to_string()).unwrap_or_else(|| s.to_string());
        return bare(l) == partition && bare(r) == partition;
    }
    false
}

/// Outer query over a derived table: lower the subquery, then apply the
/// outer filter and projection to its output (aggregates become addressable
/// through the subquery's aliases).
fn lower_over_subquery(
    q: &QuerySpec,
    table_ref: &TableRef,
    sub: &QuerySpec,
    schemas: &SchemaInfo,
    strict: bool,
) -> Result<Lowered, LowerError> {
    let inner = lower_select(sub, schemas, false)?;
    // the inner plan ends in Open(Mask(..)); strip both and continue
    let mut root = match inner.plan.root {
        Plan::Open { input } => match *input {
            Plan::Mask { input } => *input,
            other => other,
        },
        other => other,
    };

    // map outer names: subquery aliases -> inner plan columns
    let mut alias_map: BTreeMap<String, String> = BTreeMap::new();
    let mut visible: Vec<String> = Vec::new();
    for item in &sub.items {
        match item {
            SelectItem::Column { name, alias } => {
                let col = name.clone();
                if let Some(a) = alias {
                    alias_map.insert(a.clone(), col.clone());
                }
                alias_map.insert(name.clone(), col.clone());
                visible.push(col);
            }
            SelectItem::Aggregate { func, alias, .. } => {
                let col = match func {
                    AggName::Min => AGG_COL.to_string(),
                    AggName::Max => {
                        if alias_map.values().any(|v| v == AGG_COL) {
                            AGG2_COL.to_string()
                        } else {
                            AGG_COL.to_string()
                        }
                    }
                    AggName::Avg => AGG_COUNT_COL.to_string(),
                    _ => AGG_COL.to_string(),
                };
                if let Some(a) = alias {
                    alias_map.insert(a.clone(), col.clone());
                }
                visible.push(col);
            }
            SelectItem::RowNumber { .. } => {
                return Err(LowerError::Unsupported(
                    "row_no inside derived tables".into(),
                ))
            }
        }
    }
    let outer_alias = table_ref
        .alias
        .clone()
        .unwrap_or_else(|| table_ref.table.clone());
    let resolve = |name: &str| -> Result<String, LowerError> {
        let bare = match name.split_once('.') {
            Some((a, c)) if a == outer_alias => c,
            Some(_) => return Err(LowerError::UnknownColumn(name.to_string())),
            None => name,
        };
        alias_map
            .get(bare)
            .cloned()
            .ok_or_else(|| LowerError::UnknownColumn(name.to_string()))
    };

    if let Some(w) = &q.where_clause {
        let p = lower_predicate_with(w, &resolve)?;
        root = Plan::Select {
            input: Box::new(root),
            predicate: p,
            fused: true,
        };
    }
    let mut out_cols = Vec::new();
    let mut output_names = Vec::new();
    for item in &q.items {
        match item {
            SelectItem::Column { name, alias } => {
                let col = resolve(name)?;
                out_cols.push(col);
                output_names.push(alias.clone().unwrap_or_else(|| name.clone()));
            }
            _ => {
                return Err(LowerError::Unsupported(
                    "aggregates above a derived table".into(),
                ))
            }
        }
    }
    if strict {
        // the derived table's group keys are the only safe plain outputs
        for c in &out_cols {
            let inner_keys: Vec<String> = sub.group_by.iter().flat_map(|g| g.split('\u{1}')).map(|s| s.to_string()).collect();
            if !inner_keys.contains(c) {
                return Err(LowerError::StrictMode(c.clone()));
            }
        }
    }
    root = Plan::Open {
        input: Box::new(Plan::Mask {
            input: Box::new(Plan::Project {
                input: Box::new(root),
                cols: out_cols.clone(),
            }),
        }),
    };
    Ok(Lowered {
        plan: QueryPlan::new(root),
        catalog: inner.catalog,
        bindings: inner.bindings,
        output_names,
    })
}

//! Plaintext reference engine.
//!
//! Implements the exact semantics the oblivious engine must reproduce, with
//! naive loops and none of the MPC machinery. Every equivalence test opens
//! the protocol output and compares against this module. Nothing here may
//! call into the share/primitive/operator code paths.

use std::collections::HashMap;

use crate::error::EngineError;

// ---------------------------------------------------------------------------
// Primitive counterparts
// ---------------------------------------------------------------------------

/// Plaintext counterparts of the oblivious primitives, on 64-bit words.
pub mod prim {
    /// Signed less-than at a given bit width (two's complement).
    pub fn lt_signed(x: u64, y: u64, w: u32) -> u64 {
        (sign_extend(x, w) < sign_extend(y, w)) as u64
    }

    pub fn sign_extend(x: u64, w: u32) -> i64 {
        if w == 64 {
            x as i64
        } else {
            let shift = 64 - w;
            (((x << shift) as i64) >> shift) as i64
        }
    }

    pub fn eq(x: u64, y: u64, w: u32) -> u64 {
        (mask(x, w) == mask(y, w)) as u64
    }

    pub fn ltz(x: u64, w: u32) -> u64 {
        (sign_extend(x, w) < 0) as u64
    }

    /// Wrapping addition mod 2^w.
    pub fn rca(x: u64, y: u64, w: u32) -> u64 {
        mask(x.wrapping_add(y), w)
    }

    pub fn mux(b: u64, x: u64, y: u64) -> u64 {
        if b & 1 == 1 {
            x
        } else {
            y
        }
    }

    pub fn compare_swap(x: u64, y: u64) -> (u64, u64) {
        if (x as i64) < (y as i64) {
            (x, y)
        } else {
            (y, x)
        }
    }

    pub fn mask(x: u64, w: u32) -> u64 {
        if w >= 64 {
            x
        } else {
            x & ((1u64 << w) - 1)
        }
    }
}

// ---------------------------------------------------------------------------
// Relational oracle
// ---------------------------------------------------------------------------

/// A plaintext relation: named integer columns, rows of 64-bit words.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlainTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<u64>>,
}

impl PlainTable {
    pub fn new(columns: &[&str]) -> Self {
        PlainTable {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_rows(columns: &[&str], rows: Vec<Vec<u64>>) -> Self {
        PlainTable {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    pub fn col_index(&self, name: &str) -> Result<usize, EngineError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| EngineError::UnknownColumn(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Sorts rows as a multiset for order-insensitive comparisons.
pub fn normalize(mut rows: Vec<Vec<u64>>) -> Vec<Vec<u64>> {
    rows.sort();
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
    Avg,
    MinMax,
}

/// AVG yields the (sum, count) pair; division happens at presentation time.
pub fn apply_agg(func: AggFunc, values: &[u64]) -> Vec<u64> {
    match func {
        AggFunc::Count => vec![values.len() as u64],
        AggFunc::Sum => vec![values.iter().fold(0u64, |a, b| a.wrapping_add(*b))],
        AggFunc::Min => vec![values.iter().copied().min_by_key(|v| *v as i64).unwrap()],
        AggFunc::Max => vec![values.iter().copied().max_by_key(|v| *v as i64).unwrap()],
        AggFunc::Avg => vec![
            values.iter().fold(0u64, |a, b| a.wrapping_add(*b)),
            values.len() as u64,
        ],
        AggFunc::MinMax => vec![
            values.iter().copied().min_by_key(|v| *v as i64).unwrap(),
            values.iter().copied().max_by_key(|v| *v as i64).unwrap(),
        ],
    }
}

/// Group-by aggregate over plaintext rows: one output row per group, key
/// values followed by the aggregate column(s).
pub fn group_aggregate(
    table: &PlainTable,
    keys: &[&str],
    func: AggFunc,
    target: Option<&str>,
) -> Result<Vec<Vec<u64>>, EngineError> {
    let key_idx: Vec<usize> = keys
        .iter()
        .map(|k| table.col_index(k))
        .collect::<Result<_, _>>()?;
    let target_idx = match target {
        Some(t) => Some(table.col_index(t)?),
        None => None,
    };
    let mut groups: HashMap<Vec<u64>, Vec<u64>> = HashMap::new();
    let mut order: Vec<Vec<u64>> = Vec::new();
    for row in &table.rows {
        let key: Vec<u64> = key_idx.iter().map(|&i| row[i]).collect();
        let value = target_idx.map(|i| row[i]).unwrap_or(1);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(value);
    }
    let mut out = Vec::new();
    for key in order {
        let values = &groups[&key];
        let mut row = key.clone();
        row.extend(apply_agg(func, values));
        out.push(row);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Plan evaluation
// ---------------------------------------------------------------------------

use crate::operators::{AggFunc as MpcAggFunc, AggSpec};
use crate::plan::Plan;
use crate::predicate::{eval_plain, Predicate};
use std::collections::BTreeMap;

/// Evaluates a plan over plaintext relations, producing the valid-row
/// multiset the oblivious engine must open. Selections filter rows
/// immediately; masking and shuffling are no-ops on the filtered view.
/// Sort keys that name protocol-managed bit columns are ignored: within
/// the filtered view those bits are constant.
pub fn oracle_eval(
    plan: &Plan,
    db: &BTreeMap<String, PlainTable>,
) -> Result<PlainTable, EngineError> {
    Ok(match plan {
        Plan::Scan { table } => db
            .get(table)
            .ok_or_else(|| EngineError::UnknownColumn(format!("table {table}")))?
            .clone(),
        Plan::Select { input, predicate, .. } => {
            let t = oracle_eval(input, db)?;
            let rows = t
                .rows
                .iter()
                .filter(|row| row_passes(predicate, &t.columns, row))
                .cloned()
                .collect();
            PlainTable {
                columns: t.columns,
                rows,
            }
        }
        Plan::AdjacentSelect { input, predicate, .. } => {
            let t = oracle_eval(input, db)?;
            let mut rows = Vec::new();
            for i in 0..t.rows.len().saturating_sub(1) {
                let get = |name: &str| -> Option<u64> {
                    let (row, bare): (&[u64], &str) = match name.strip_prefix("next.") {
                        Some(rest) => (&t.rows[i + 1], rest),
                        None => (&t.rows[i], name),
                    };
                    match lookup(&t.columns, row, bare) {
                        Some(v) => Some(v),
                        // protocol bits are constant 1 in the filtered view
                        None if bare.starts_with("a_") => Some(1),
                        None => None,
                    }
                };
                if eval_plain(predicate, &get) == Some(true) {
                    rows.push(t.rows[i].clone());
                }
            }
            PlainTable {
                columns: t.columns,
                rows,
            }
        }
        Plan::Project { input, cols } => {
            let t = oracle_eval(input, db)?;
            // aggregate columns ride along, as in the oblivious engine
            let mut keep = cols.clone();
            for extra in ["a_g", "a_g_cnt", "a_g2"] {
                if t.columns.iter().any(|c| c == extra) && !keep.iter().any(|c| c == extra) {
                    keep.push(extra.to_string());
                }
            }
            let idx: Vec<usize> = keep
                .iter()
                .map(|c| t.col_index(c))
                .collect::<Result<_, _>>()?;
            PlainTable {
                columns: keep,
                rows: t
                    .rows
                    .iter()
                    .map(|r| idx.iter().map(|&i| r[i]).collect())
                    .collect(),
            }
        }
        Plan::Join { left, right, predicate, .. } => {
            let l = oracle_eval(left, db)?;
            let r = oracle_eval(right, db)?;
            let mut columns = l.columns.clone();
            columns.extend(r.columns.clone());
            let mut rows = Vec::new();
            for lr in &l.rows {
                for rr in &r.rows {
                    let mut row = lr.clone();
                    row.extend(rr.iter().copied());
                    if row_passes(predicate, &columns, &row) {
                        rows.push(row);
                    }
                }
            }
            PlainTable { columns, rows }
        }
        Plan::SemiJoin { left, right, predicate, partial, .. } => {
            let l = oracle_eval(left, db)?;
            let r = oracle_eval(right, db)?;
            let mut columns = l.columns.clone();
            let mut rows = Vec::new();
            for lr in &l.rows {
                let mut matches = Vec::new();
                for rr in &r.rows {
                    let mut pair = lr.clone();
                    pair.extend(rr.iter().copied());
                    let mut pair_cols = l.columns.clone();
                    pair_cols.extend(r.columns.clone());
                    if row_passes(predicate, &pair_cols, &pair) {
                        matches.push(rr.clone());
                    }
                }
                if matches.is_empty() {
                    continue;
                }
                let mut row = lr.clone();
                if let Some(spec) = partial {
                    row.extend(partial_value(spec, &r.columns, &matches)?);
                }
                rows.push(row);
            }
            if let Some(spec) = partial {
                columns.push("a_g".to_string());
                if spec.func == MpcAggFunc::Avg {
                    columns.push("a_g_cnt".to_string());
                }
                if spec.func == MpcAggFunc::MinMax {
                    columns.push("a_g2".to_string());
                }
            }
            PlainTable { columns, rows }
        }
        Plan::OrderBy { input, keys, limit, .. } => {
            let t = oracle_eval(input, db)?;
            let mut rows = t.rows.clone();
            let key_idx: Vec<(usize, bool)> = keys
                .iter()
                .filter_map(|k| t.col_index(&k.col).ok().map(|i| (i, k.desc)))
                .collect();
            rows.sort_by(|a, b| {
                for &(i, desc) in &key_idx {
                    let (x, y) = (a[i] as i64, b[i] as i64);
                    let ord = if desc { y.cmp(&x) } else { x.cmp(&y) };
                    if ord != std::cmp::Ordering::Equal {
                        return ord;
                    }
                }
                std::cmp::Ordering::Equal
            });
            if let Some(k) = limit {
                rows.truncate(*k);
            }
            PlainTable {
                columns: t.columns,
                rows,
            }
        }
        Plan::GroupBy { input, keys, agg, .. }
        | Plan::GroupBySecondPhase { input, keys, agg }
        | Plan::GroupBySequential { input, keys, agg } => {
            let t = oracle_eval(input, db)?;
            oracle_group(&t, keys, agg)?
        }
        Plan::Distinct { input, keys, .. } | Plan::DistinctSecondPhase { input, keys } => {
            let t = oracle_eval(input, db)?;
            let idx: Vec<usize> = keys
                .iter()
                .map(|k| t.col_index(k))
                .collect::<Result<_, _>>()?;
            let mut seen = std::collections::HashSet::new();
            let rows = t
                .rows
                .iter()
                .filter(|r| seen.insert(idx.iter().map(|&i| r[i]).collect::<Vec<u64>>()))
                .cloned()
                .collect();
            PlainTable {
                columns: t.columns,
                rows,
            }
        }
        Plan::Shuffle { input } | Plan::Mask { input } | Plan::Open { input } => {
            oracle_eval(input, db)?
        }
        Plan::GlobalAgg { input, agg } => {
            let t = oracle_eval(input, db)?;
            let values: Vec<u64> = match &agg.target {
                Some(c) => {
                    let i = t.col_index(c)?;
                    t.rows.iter().map(|r| r[i]).collect()
                }
                None => vec![1; t.rows.len()],
            };
            let func = convert_agg(agg.func);
            let out = if values.is_empty() {
                match func {
                    AggFunc::Count => vec![0],
                    AggFunc::Sum => vec![0],
                    AggFunc::Avg => vec![0, 0],
                    AggFunc::Min => vec![i64::MAX as u64],
                    AggFunc::Max => vec![i64::MIN as u64],
                    AggFunc::MinMax => vec![i64::MAX as u64, i64::MIN as u64],
                }
            } else {
                apply_agg(func, &values)
            };
            let mut columns = vec!["a_g".to_string()];
            if agg.func == MpcAggFunc::Avg {
                columns.push("a_g_cnt".to_string());
            }
            PlainTable {
                columns,
                rows: vec![out],
            }
        }
    })
}

fn lookup(columns: &[String], row: &[u64], name: &str) -> Option<u64> {
    columns.iter().position(|c| c == name).map(|i| row[i])
}

fn row_passes(predicate: &Predicate, columns: &[String], row: &[u64]) -> bool {
    let get = |name: &str| -> Option<u64> {
        match lookup(columns, row, name) {
            Some(v) => Some(v),
            // protocol-managed bits are constant 1 within the filtered view
            None if name.starts_with("a_") => Some(1),
            None => None,
        }
    };
    eval_plain(predicate, &get) == Some(true)
}

fn convert_agg(f: MpcAggFunc) -> AggFunc {
    match f {
        MpcAggFunc::Count => AggFunc::Count,
        MpcAggFunc::Sum => AggFunc::Sum,
        MpcAggFunc::Min => AggFunc::Min,
        MpcAggFunc::Max => AggFunc::Max,
        MpcAggFunc::Avg => AggFunc::Avg,
        MpcAggFunc::MinMax => AggFunc::MinMax,
    }
}

fn partial_value(
    spec: &AggSpec,
    r_cols: &[String],
    matches: &[Vec<u64>],
) -> Result<Vec<u64>, EngineError> {
    let values: Vec<u64> = match &spec.target {
        Some(c) => {
            let i = r_cols
                .iter()
                .position(|x| x == c)
                .ok_or_else(|| EngineError::UnknownColumn(c.clone()))?;
            matches.iter().map(|r| r[i]).collect()
        }
        None => vec![1; matches.len()],
    };
    Ok(apply_agg(convert_agg(spec.func), &values))
}

/// Group rows by keys, folding a pre-existing partial aggregate column if
/// one is present (decomposed plans), otherwise aggregating from scratch.
fn oracle_group(t: &PlainTable, keys: &[String], agg: &AggSpec) -> Result<PlainTable, EngineError> {
    let key_idx: Vec<usize> = keys
        .iter()
        .map(|k| t.col_index(k))
        .collect::<Result<_, _>>()?;
    let pre = t.col_index("a_g").ok();
    let pre_cnt = t.col_index("a_g_cnt").ok();
    let target_idx = match (&agg.target, pre) {
        (_, Some(i)) => Some(i),
        (Some(c), None) => Some(t.col_index(c)?),
        (None, None) => None,
    };
    let mut order: Vec<Vec<u64>> = Vec::new();
    let mut groups: HashMap<Vec<u64>, (Vec<u64>, Vec<u64>, Vec<u64>)> = HashMap::new();
    for row in &t.rows {
        let key: Vec<u64> = key_idx.iter().map(|&i| row[i]).collect();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        let entry = groups.entry(key).or_insert_with(|| (row.clone(), vec![], vec![]));
        entry.1.push(target_idx.map(|i| row[i]).unwrap_or(1));
        if let Some(i) = pre_cnt {
            entry.2.push(row[i]);
        }
    }
    let mut columns = t.columns.clone();
    if pre.is_none() {
        columns.push("a_g".to_string());
        if agg.func == MpcAggFunc::Avg {
            columns.push("a_g_cnt".to_string());
        }
        if agg.func == MpcAggFunc::MinMax {
            columns.push("a_g2".to_string());
        }
    }
    let mut rows = Vec::new();
    for key in order {
        let (first_row, values, counts) = &groups[&key];
        let agg_vals: Vec<u64> = if pre.is_some() {
            // fold the partials: counts and sums add, min/min and max/max
            let combined = match convert_agg(agg.func) {
                AggFunc::Count | AggFunc::Sum => {
                    vec![values.iter().fold(0u64, |a, b| a.wrapping_add(*b))]
                }
                AggFunc::Min => vec![values.iter().copied().min_by_key(|v| *v as i64).unwrap()],
                AggFunc::Max => vec![values.iter().copied().max_by_key(|v| *v as i64).unwrap()],
                AggFunc::Avg => vec![
                    values.iter().fold(0u64, |a, b| a.wrapping_add(*b)),
                    counts.iter().fold(0u64, |a, b| a.wrapping_add(*b)),
                ],
                AggFunc::MinMax => vec![
                    values.iter().copied().min_by_key(|v| *v as i64).unwrap(),
                    values.iter().copied().max_by_key(|v| *v as i64).unwrap(),
                ],
            };
            combined
        } else {
            apply_agg(convert_agg(agg.func), values)
        };
        let mut row = first_row.clone();
        if let Some(i) = pre {
            row[i] = agg_vals[0];
            if let (Some(ci), true) = (pre_cnt, agg_vals.len() > 1) {
                row[ci] = agg_vals[1];
            }
        } else {
            row.extend(agg_vals);
        }
        rows.push(row);
    }
    Ok(PlainTable { columns, rows })
}

//! Plan execution inside each party's protocol thread, plus the
//! three-party driver that shares inputs, runs the plan, and opens the
//! result at the analyst.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::error::EngineError;
use crate::operators::{self as ops, SortKey};
use crate::plan::{Plan, QueryPlan};
use crate::predicate::proactive_col_name;
use crate::runtime::{run_protocol, CommTrace, OpCounters, TransportKind};
use crate::table::{deal_table_prefix_checked, open_table, ColumnKind, OpenedTable, SharedTable};

/// One party's base relations, keyed by table name.
pub type PartyDb = BTreeMap<String, SharedTable>;

/// Executes the plan subtree over this party's share of the database.
pub fn execute(
    ctx: &mut crate::runtime::PartyCtx,
    plan: &Plan,
    db: &PartyDb,
) -> Result<SharedTable, EngineError> {
    match plan {
        Plan::Scan { table } => {
            let t = db
                .get(table)
                .ok_or_else(|| EngineError::UnknownColumn(format!("table {table}")))?;
            let mut t = t.clone();
            if !t.rows.is_power_of_two() {
                let target = t.rows.max(1).next_power_of_two();
                t.pad_with_invalid(ctx, target - t.rows);
            }
            Ok(t)
        }
        Plan::Select { input, predicate, fused } => {
            let t = execute(ctx, input, db)?;
            ops::op_select(ctx, &t, predicate, *fused)
        }
        Plan::AdjacentSelect { input, predicate, fused } => {
            let t = execute(ctx, input, db)?;
            ops::op_adjacent_select(ctx, &t, predicate, *fused)
        }
        Plan::Project { input, cols } => {
            let t = execute(ctx, input, db)?;
            ops::op_project(&t, cols)
        }
        Plan::Join { left, right, predicate, fused } => {
            let l = execute(ctx, left, db)?;
            let r = execute(ctx, right, db)?;
            ops::op_join(ctx, &l, &r, predicate, ctx_batch_rows(ctx), *fused)
        }
        Plan::SemiJoin { left, right, predicate, partial, fused } => {
            let l = execute(ctx, left, db)?;
            let r = execute(ctx, right, db)?;
            ops::op_semijoin(ctx, &l, &r, predicate, partial.as_ref(), *fused)
        }
        Plan::OrderBy { input, keys, limit, gates_first } => {
            let t = execute(ctx, input, db)?;
            let mut sort_keys: Vec<SortKey> = Vec::new();
            if *gates_first {
                for m in t.meta.iter().filter(|m| m.kind == ColumnKind::Flag) {
                    sort_keys.push(SortKey::desc(&m.name));
                }
            }
            sort_keys.extend(keys.iter().map(|k| SortKey {
                col: k.col.clone(),
                desc: k.desc,
            }));
            ops::op_sort(ctx, &t, &sort_keys, *limit)
        }
        Plan::GroupBy { input, keys, agg, suppress_shuffle } => {
            let t = execute(ctx, input, db)?;
            let flags: Vec<String> = t
                .meta
                .iter()
                .filter(|m| m.kind == ColumnKind::Flag)
                .map(|m| m.name.clone())
                .collect();
            let mut sort_keys: Vec<SortKey> = flags.iter().map(|f| SortKey::desc(f)).collect();
            sort_keys.extend(keys.iter().map(|k| SortKey::asc(k)));
            let sorted = ops::op_sort(ctx, &t, &sort_keys, None)?;
            let agged = ops::op_oddeven_aggregate(ctx, &sorted, keys, agg, &flags)?;
            if *suppress_shuffle {
                Ok(agged)
            } else {
                ops::op_shuffle(ctx, &agged)
            }
        }
        Plan::GroupBySecondPhase { input, keys, agg } => {
            let t = execute(ctx, input, db)?;
            let flags: Vec<String> = t
                .meta
                .iter()
                .filter(|m| m.kind == ColumnKind::Flag)
                .map(|m| m.name.clone())
                .collect();
            ops::op_oddeven_aggregate(ctx, &t, keys, agg, &flags)
        }
        Plan::GroupBySequential { input, keys, agg } => {
            let t = execute(ctx, input, db)?;
            ops::op_groupby_sequential(ctx, &t, keys, agg)
        }
        Plan::Distinct { input, keys, fused } => {
            let t = execute(ctx, input, db)?;
            if *fused {
                let bits: Vec<String> = t
                    .meta
                    .iter()
                    .filter(|m| m.kind == ColumnKind::Flag)
                    .map(|m| m.name.clone())
                    .collect();
                ops::op_distinct(ctx, &t, keys, &bits)
            } else {
                let sort_keys: Vec<SortKey> = keys.iter().map(|k| SortKey::asc(k)).collect();
                let sorted = ops::op_sort(ctx, &t, &sort_keys, None)?;
                let prior = sorted
                    .meta
                    .iter()
                    .find(|m| m.kind == ColumnKind::Flag)
                    .map(|m| m.name.clone());
                ops::op_distinct_sequential(ctx, &sorted, keys, prior.as_deref())
            }
        }
        Plan::DistinctSecondPhase { input, keys } => {
            let t = execute(ctx, input, db)?;
            ops::op_distinct_second_phase(ctx, &t, keys)
        }
        Plan::Shuffle { input } => {
            let t = execute(ctx, input, db)?;
            ops::op_shuffle(ctx, &t)
        }
        Plan::Mask { input } => {
            let t = execute(ctx, input, db)?;
            ops::op_mask(ctx, &t)
        }
        Plan::GlobalAgg { input, agg } => {
            let t = execute(ctx, input, db)?;
            ops::op_global_agg(ctx, &t, agg)
        }
        Plan::Open { input } => execute(ctx, input, db),
    }
}

// The join batch size travels through thread-local plumbing rather than the
// context to keep the operator signatures close to their contracts.
use std::cell::Cell;
thread_local! {
    static BATCH_ROWS: Cell<usize> = const { Cell::new(4096) };
}

fn ctx_batch_rows(_ctx: &crate::runtime::PartyCtx) -> usize {
    BATCH_ROWS.with(|b| b.get())
}

pub fn set_batch_rows(n: usize) {
    BATCH_ROWS.with(|b| b.set(n.max(1)));
}

/// Result of a three-party query execution.
pub struct RunOutcome {
    pub opened: OpenedTable,
    pub traces: [CommTrace; 3],
    pub ops: [OpCounters; 3],
    pub randomness_draws: [u64; 3],
}

/// Shares the plaintext database, runs the plan at three parties over the
/// given transport, and opens the result.
pub fn run_plan(
    plan: &QueryPlan,
    tables: &BTreeMap<String, (Vec<String>, Vec<Vec<u64>>)>,
    transport: TransportKind,
    seed: u64,
    batch_rows: usize,
) -> Result<RunOutcome, EngineError> {
    let dbs = share_database(tables, &plan.annotations.proactive, seed)?;
    let root = plan.root.clone();
    let runs = run_protocol(seed, transport, dbs, move |ctx, db| {
        set_batch_rows(batch_rows);
        execute(ctx, &root, &db).map_err(|e| match e {
            EngineError::Protocol(p) => p,
            other => {
                // surface engine errors as a transport teardown so the other
                // parties unblock; the driver reports the panic
                panic!("query execution failed: {other}")
            }
        })
    })?;
    let [r1, r2, r3] = runs;
    let opened = open_table(&[r1.output, r2.output, r3.output])?;
    Ok(RunOutcome {
        opened,
        traces: [r1.trace, r2.trace, r3.trace],
        ops: [r1.ops, r2.ops, r3.ops],
        randomness_draws: [r1.randomness_draws, r2.randomness_draws, r3.randomness_draws],
    })
}

/// Runs a plan over pre-shared per-party databases (share files already
/// distributed).
pub fn run_plan_shared(
    root: &Plan,
    dbs: [PartyDb; 3],
    transport: TransportKind,
    seed: u64,
    batch_rows: usize,
) -> Result<RunOutcome, EngineError> {
    let root = root.clone();
    let runs = run_protocol(seed, transport, dbs, move |ctx, db| {
        set_batch_rows(batch_rows);
        execute(ctx, &root, &db).map_err(|e| match e {
            EngineError::Protocol(p) => p,
            other => panic!("query execution failed: {other}"),
        })
    })?;
    let [r1, r2, r3] = runs;
    let opened = open_table(&[r1.output, r2.output, r3.output])?;
    Ok(RunOutcome {
        opened,
        traces: [r1.trace, r2.trace, r3.trace],
        ops: [r1.ops, r2.ops, r3.ops],
        randomness_draws: [r1.randomness_draws, r2.randomness_draws, r3.randomness_draws],
    })
}

/// Dealer-side sharing of every base relation, including the proactive
/// difference columns the plan's manifest requests.
pub fn share_database(
    tables: &BTreeMap<String, (Vec<String>, Vec<Vec<u64>>)>,
    proactive: &[(String, crate::share::ProactiveKind, u64)],
    seed: u64,
) -> Result<[PartyDb; 3], EngineError> {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed_dea1);
    let mut out: [PartyDb; 3] = [BTreeMap::new(), BTreeMap::new(), BTreeMap::new()];
    for (name, (cols, rows)) in tables {
        let mut col_names: Vec<String> = cols.clone();
        let mut full_rows: Vec<Vec<u64>> = rows.clone();
        for (col, kind, c) in proactive {
            if let Some(i) = cols.iter().position(|x| x == col) {
                col_names.push(proactive_col_name(col, *kind, *c));
                for row in full_rows.iter_mut() {
                    row.push(kind.apply(row[i], *c));
                }
            }
        }
        let refs: Vec<&str> = col_names.iter().map(|s| s.as_str()).collect();
        let mut shared = deal_table_prefix_checked(&refs, &full_rows, cols.len(), &mut rng)?;
        for t in shared.iter_mut() {
            for m in t.meta.iter_mut().skip(cols.len()) {
                m.kind = ColumnKind::Derived;
            }
        }
        for (db, t) in out.iter_mut().zip(shared) {
            db.insert(name.clone(), t);
        }
    }
    Ok(out)
}

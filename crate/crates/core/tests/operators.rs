//! Relational-operator conformance: semantics against the plaintext oracle,
//! exact round counts, cardinality laws, and trace obliviousness.

use obliq_core::harness::open_bits;
use obliq_core::operators::{self as ops, AggFunc, AggSpec, SortKey};
use obliq_core::oracle::{self, PlainTable};
use obliq_core::predicate::{CmpOp, Expr, Predicate};
use obliq_core::primitives::ShareVec;
use obliq_core::runtime::{run_protocol, PartyCtx, PartyRun, TransportKind};
use obliq_core::table::{deal_table, open_table, OpenedTable, SharedTable};
use obliq_core::EngineError;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn run_tables<F>(inputs: [Vec<SharedTable>; 3], f: F) -> [PartyRun<SharedTable>; 3]
where
    F: Fn(&mut PartyCtx, Vec<SharedTable>) -> Result<SharedTable, EngineError>
        + Send
        + Sync
        + 'static,
{
    run_protocol(0xBEEF, TransportKind::InProcess, inputs, move |ctx, input| {
        f(ctx, input).map_err(|e| match e {
            EngineError::Protocol(p) => p,
            other => panic!("engine error: {other}"),
        })
    })
    .unwrap()
}

fn deal(names: &[&str], rows: Vec<Vec<u64>>, seed: u64) -> [Vec<SharedTable>; 3] {
    let mut rng = StdRng::seed_from_u64(seed);
    let [a, b, c] = deal_table(names, &rows, &mut rng).unwrap();
    [vec![a], vec![b], vec![c]]
}

fn deal2(
    n1: &[&str],
    r1: Vec<Vec<u64>>,
    n2: &[&str],
    r2: Vec<Vec<u64>>,
    seed: u64,
) -> [Vec<SharedTable>; 3] {
    let mut rng = StdRng::seed_from_u64(seed);
    let [a1, b1, c1] = deal_table(n1, &r1, &mut rng).unwrap();
    let [a2, b2, c2] = deal_table(n2, &r2, &mut rng).unwrap();
    [vec![a1, a2], vec![b1, b2], vec![c1, c2]]
}

fn opened(runs: &[PartyRun<SharedTable>; 3]) -> OpenedTable {
    open_table(&[
        runs[0].output.clone(),
        runs[1].output.clone(),
        runs[2].output.clone(),
    ])
    .unwrap()
}

fn open_col(runs: &[PartyRun<SharedTable>; 3], name: &str) -> Vec<u64> {
    let cols: Vec<ShareVec> = runs
        .iter()
        .map(|r| r.output.col(name).unwrap().clone())
        .collect();
    open_bits(&[cols[0].clone(), cols[1].clone(), cols[2].clone()]).unwrap()
}

fn rounds(runs: &[PartyRun<SharedTable>; 3]) -> u64 {
    let r = runs[0].trace.total_rounds();
    assert!(runs.iter().all(|x| x.trace.total_rounds() == r));
    r
}

fn flag_name(runs: &[PartyRun<SharedTable>; 3]) -> String {
    runs[0]
        .output
        .meta
        .iter()
        .find(|m| m.kind == obliq_core::table::ColumnKind::Flag)
        .map(|m| m.name.clone())
        .unwrap()
}

// ---------------------------------------------------------------------------
// Projection & selection
// ---------------------------------------------------------------------------

#[test]
fn project_is_free_and_keeps_flags() {
    let inputs = deal(&["a", "b"], vec![vec![1, 2], vec![3, 4]], 1);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let selected = ops::op_select(ctx, &t, &Predicate::eq_cols("a", "a"), true)?;
        let before = ctx.rounds();
        let projected = ops::op_project(&selected, &["b".to_string()])?;
        assert_eq!(ctx.rounds(), before);
        Ok(projected)
    });
    // flag column survived projection and gates the rows (trivially true here)
    let got = opened(&runs);
    assert_eq!(got.columns, vec!["b"]);
    assert_eq!(got.rows.len(), 2);
}

#[test]
fn select_equality_bits() {
    let inputs = deal(&["a"], vec![vec![1], vec![5], vec![5], vec![9]], 2);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_select(
            ctx,
            &t,
            &Predicate::Cmp(CmpOp::Eq, Expr::col("a"), Expr::Const(5)),
            true,
        )
    });
    let name = flag_name(&runs);
    assert_eq!(open_col(&runs, &name), vec![0, 1, 1, 0]);
}

#[test]
fn select_range_predicate_rounds() {
    // age > 30 AND age < 40: two inequalities fused plus one conjunction
    let inputs = deal(&["age"], vec![vec![25], vec![35], vec![31], vec![40]], 3);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_select(
            ctx,
            &t,
            &Predicate::And(vec![
                Predicate::Cmp(CmpOp::Gt, Expr::col("age"), Expr::Const(30)),
                Predicate::Cmp(CmpOp::Lt, Expr::col("age"), Expr::Const(40)),
            ]),
            true,
        )
    });
    assert_eq!(rounds(&runs), 8); // C_s(ineq) + 1
    let name = flag_name(&runs);
    assert_eq!(open_col(&runs, &name), vec![0, 1, 1, 0]);
}

#[test]
fn select_true_keeps_cardinality() {
    let inputs = deal(&["a"], vec![vec![7], vec![8], vec![9]], 4);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_select(ctx, &t, &Predicate::Const(true), true)
    });
    assert_eq!(runs[0].output.rows, 3);
    let name = flag_name(&runs);
    assert_eq!(open_col(&runs, &name), vec![1, 1, 1]);
}

#[test]
fn select_after_select_composes_with_one_round() {
    let rows: Vec<Vec<u64>> = (0..16u64).map(|i| vec![i % 4, i % 3]).collect();
    let inputs = deal(&["a", "b"], rows.clone(), 5);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let s1 = ops::op_select(
            ctx,
            &t,
            &Predicate::Cmp(CmpOp::Eq, Expr::col("a"), Expr::Const(1)),
            true,
        )?;
        let before = ctx.rounds();
        let s2 = ops::op_select(
            ctx,
            &s1,
            &Predicate::Cmp(CmpOp::Eq, Expr::col("b"), Expr::Const(2)),
            true,
        )?;
        // second select: its own equality plus exactly one conjunction round
        assert_eq!(ctx.rounds() - before, 6 + 1);
        Ok(s2)
    });
    let name = flag_name(&runs);
    let expect: Vec<u64> = rows
        .iter()
        .map(|r| ((r[0] == 1) && (r[1] == 2)) as u64)
        .collect();
    assert_eq!(open_col(&runs, &name), expect);
}

// ---------------------------------------------------------------------------
// Joins
// ---------------------------------------------------------------------------

#[test]
fn join_pair_bits() {
    let inputs = deal2(
        &["ra"],
        vec![vec![1], vec![2]],
        &["sa"],
        vec![vec![2], vec![3]],
        6,
    );
    let runs = run_tables(inputs, |ctx, mut input| {
        let s = input.pop().unwrap();
        let r = input.pop().unwrap();
        ops::op_join(ctx, &r, &s, &Predicate::eq_cols("ra", "sa"), 4096, true)
    });
    assert_eq!(runs[0].output.rows, 4);
    assert_eq!(open_col(&runs, "a_theta"), vec![0, 0, 1, 0]);
}

#[test]
fn join_rounds_independent_of_cardinality() {
    let mk = |n: u64, seed| {
        let rows: Vec<Vec<u64>> = (0..n).map(|i| vec![i]).collect();
        let rows2: Vec<Vec<u64>> = (0..n).map(|i| vec![i * 2]).collect();
        deal2(&["ra"], rows, &["sa"], rows2, seed)
    };
    let run = |inputs| {
        run_tables(inputs, |ctx, mut input: Vec<SharedTable>| {
            let s = input.pop().unwrap();
            let r = input.pop().unwrap();
            ops::op_join(ctx, &r, &s, &Predicate::eq_cols("ra", "sa"), 4096, true)
        })
    };
    let small = run(mk(4, 7));
    let large = run(mk(16, 8));
    assert_eq!(rounds(&small), rounds(&large));
    assert_eq!(large[0].output.rows, 256);
}

#[test]
fn semijoin_bits_and_rounds() {
    let inputs = deal2(
        &["ra"],
        vec![vec![1], vec![2], vec![3]],
        &["sa"],
        vec![
            vec![2],
            vec![2],
            vec![5],
            vec![6],
            vec![7],
            vec![8],
            vec![9],
            vec![10],
        ],
        9,
    );
    let runs = run_tables(inputs, |ctx, mut input| {
        let s = input.pop().unwrap();
        let r = input.pop().unwrap();
        ops::op_semijoin(ctx, &r, &s, &Predicate::eq_cols("ra", "sa"), None, true)
    });
    // C_s(eq) + ceil(log 8) = 6 + 3
    assert_eq!(rounds(&runs), 9);
    let name = flag_name(&runs);
    assert_eq!(open_col(&runs, &name), vec![0, 1, 0]);
}

#[test]
fn semijoin_partial_count() {
    let inputs = deal2(
        &["ra"],
        vec![vec![2]],
        &["sa"],
        vec![vec![2], vec![2], vec![5]],
        10,
    );
    let runs = run_tables(inputs, |ctx, mut input| {
        let s = input.pop().unwrap();
        let r = input.pop().unwrap();
        ops::op_semijoin(
            ctx,
            &r,
            &s,
            &Predicate::eq_cols("ra", "sa"),
            Some(&AggSpec {
                func: AggFunc::Count,
                target: None,
                dual: true,
            }),
            true,
        )
    });
    let agg: Vec<ShareVec> = runs
        .iter()
        .map(|r| r.output.col(ops::AGG_COL).unwrap().clone())
        .collect();
    let opened =
        obliq_core::harness::open_vec(&[agg[0].clone(), agg[1].clone(), agg[2].clone()]).unwrap();
    assert_eq!(opened, vec![2]);
}

// ---------------------------------------------------------------------------
// Sort & shuffle
// ---------------------------------------------------------------------------

#[test]
fn sort_single_column_rounds_and_ops() {
    let rows: Vec<Vec<u64>> = vec![5, 3, 8, 1, 9, 2, 7, 4].into_iter().map(|v| vec![v]).collect();
    let inputs = deal(&["k"], rows, 11);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)
    });
    // 6 stages of (C_s(ineq) + 1) rounds
    assert_eq!(rounds(&runs), 48);
    // (1/4) n log n (log n + 1) (C_o(ineq) + 6) = 24 * 259
    for r in &runs {
        assert_eq!(r.ops.total(), 6216);
    }
    let got = opened(&runs);
    let keys: Vec<u64> = got.rows.iter().map(|r| r[0]).collect();
    assert_eq!(keys, vec![1, 2, 3, 4, 5, 7, 8, 9]);
}

#[test]
fn sort_is_stable_on_sorted_input() {
    let rows: Vec<Vec<u64>> = (0..16u64).map(|i| vec![i, 100 + i]).collect();
    let inputs = deal(&["k", "v"], rows.clone(), 12);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)
    });
    let got = opened(&runs);
    assert_eq!(got.rows, rows);
}

#[test]
fn sort_matches_plaintext_on_random_permutations() {
    let mut rng = StdRng::seed_from_u64(13);
    for trial in 0..3 {
        let n = 64;
        let mut rows: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.gen_range(0..32), rng.gen()]).collect();
        let inputs = deal(&["k", "v"], rows.clone(), 100 + trial);
        let runs = run_tables(inputs, |ctx, mut input| {
            let t = input.pop().unwrap();
            ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)
        });
        let got = opened(&runs);
        rows.sort_by_key(|r| (r[0] as i64, r[1]));
        let mut got_rows = got.rows.clone();
        // same key order; ties compared as multisets
        let got_keys: Vec<u64> = got_rows.iter().map(|r| r[0]).collect();
        let want_keys: Vec<u64> = rows.iter().map(|r| r[0]).collect();
        assert_eq!(got_keys, want_keys);
        got_rows.sort();
        rows.sort();
        assert_eq!(got_rows, rows);
    }
}

#[test]
fn sort_signed_order_and_descending() {
    let vals: Vec<i64> = vec![3, -5, 0, 7, -3, 2, -8, 4];
    let rows: Vec<Vec<u64>> = vals.iter().map(|&v| vec![v as u64]).collect();
    let inputs = deal(&["k"], rows, 14);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_sort(ctx, &t, &[SortKey::desc("k")], Some(3))
    });
    let got = opened(&runs);
    let keys: Vec<i64> = got.rows.iter().map(|r| r[0] as i64).collect();
    assert_eq!(keys, vec![7, 4, 3]); // limit keeps the first k rows
}

#[test]
fn sort_pads_non_power_of_two() {
    let rows: Vec<Vec<u64>> = vec![vec![3], vec![1], vec![2]];
    let inputs = deal(&["k"], rows, 15);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)
    });
    // padded to 4 physical rows, pad row invalid and sorted last
    assert_eq!(runs[0].output.rows, 4);
    let got = opened(&runs);
    assert_eq!(got.rows, vec![vec![1], vec![2], vec![3]]);
}

#[test]
fn shuffle_preserves_multiset_and_costs_one_sort() {
    let rows: Vec<Vec<u64>> = (0..8u64).map(|i| vec![i, i * 10]).collect();
    let inputs = deal(&["a", "b"], rows.clone(), 16);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_shuffle(ctx, &t)
    });
    assert_eq!(rounds(&runs), 48); // same as sorting 8 rows
    let got = opened(&runs).sorted();
    assert_eq!(got.rows, rows);
}

#[test]
fn shuffle_single_row_unchanged() {
    let inputs = deal(&["a"], vec![vec![42]], 17);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_shuffle(ctx, &t)
    });
    assert_eq!(opened(&runs).rows, vec![vec![42]]);
}

// ---------------------------------------------------------------------------
// Group-by
// ---------------------------------------------------------------------------

fn count_spec(dual: bool) -> AggSpec {
    AggSpec {
        func: AggFunc::Count,
        target: None,
        dual,
    }
}

#[test]
fn groupby_sequential_count() {
    let inputs = deal(&["k"], vec![vec![1], vec![1], vec![2]], 18);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let sorted = ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)?;
        ops::op_groupby_sequential(ctx, &sorted, &["k".to_string()], &count_spec(false))
    });
    let got = opened(&runs).sorted();
    assert_eq!(got.rows, vec![vec![1, 2], vec![2, 1]]);
}

#[test]
fn groupby_sequential_all_distinct_and_single_group() {
    let inputs = deal(&["k", "v"], vec![vec![1, 3], vec![2, 4], vec![3, 5]], 19);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let sorted = ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)?;
        ops::op_groupby_sequential(ctx, &sorted, &["k".to_string()], &count_spec(false))
    });
    let got = opened(&runs).sorted();
    assert_eq!(got.rows, vec![vec![1, 3, 1], vec![2, 4, 1], vec![3, 5, 1]]);

    let inputs = deal(&["k", "v"], vec![vec![1, 3], vec![1, 4], vec![1, 5]], 20);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let sorted = ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)?;
        ops::op_groupby_sequential(
            ctx,
            &sorted,
            &["k".to_string()],
            &AggSpec {
                func: AggFunc::Sum,
                target: Some("v".to_string()),
                dual: false,
            },
        )
    });
    let got = opened(&runs);
    // one valid row carrying the group sum; v column holds the last value
    assert_eq!(got.rows.len(), 1);
    assert_eq!(got.rows[0][0], 1);
    assert_eq!(*got.rows[0].last().unwrap(), 12);
}

#[test]
fn oddeven_count_sorted_input() {
    let inputs = deal(&["k"], vec![vec![1], vec![1], vec![1], vec![2]], 21);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_oddeven_aggregate(ctx, &t, &["k".to_string()], &count_spec(false), &[])
    });
    let got = opened(&runs).sorted();
    assert_eq!(got.rows, vec![vec![1, 3], vec![2, 1]]);
}

#[test]
fn oddeven_group_spanning_middle() {
    let inputs = deal(&["k"], vec![vec![0], vec![1], vec![1], vec![1]], 22);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_oddeven_aggregate(ctx, &t, &["k".to_string()], &count_spec(false), &[])
    });
    let got = opened(&runs).sorted();
    assert_eq!(got.rows, vec![vec![0, 1], vec![1, 3]]);
}

#[test]
fn oddeven_respecting_filter_bits() {
    // keys [1,1,1,2] with filter bits [1,0,1,1]: group 1 counts only 2
    let inputs = deal(&["k", "f"], vec![vec![1, 1], vec![1, 0], vec![1, 1], vec![2, 1]], 23);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let flagged = ops::op_select(ctx, &t, &Predicate::Cmp(CmpOp::Eq, Expr::col("f"), Expr::Const(1)), true)?;
        let flag = flagged
            .meta
            .iter()
            .find(|m| m.kind == obliq_core::table::ColumnKind::Flag)
            .unwrap()
            .name
            .clone();
        let sorted = ops::op_sort(
            ctx,
            &flagged,
            &[SortKey::desc(&flag), SortKey::asc("k")],
            None,
        )?;
        let agged = ops::op_oddeven_aggregate(
            ctx,
            &sorted,
            &["k".to_string()],
            &count_spec(false),
            &[flag.clone()],
        )?;
        ops::op_mask(ctx, &agged)
    });
    let got = opened(&runs).sorted();
    // column order: k, f, count
    assert_eq!(got.rows, vec![vec![1, 1, 2], vec![2, 1, 1]]);
}

#[test]
fn oddeven_random_tables_match_oracle() {
    let mut rng = StdRng::seed_from_u64(24);
    for trial in 0..8 {
        let n = 16;
        let rows: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.gen_range(0..5), rng.gen_range(0..10)]).collect();
        let plain = PlainTable::with_rows(&["k", "v"], rows.clone());
        let expect = oracle::normalize(
            oracle::group_aggregate(&plain, &["k"], oracle::AggFunc::Sum, Some("v")).unwrap(),
        );
        let inputs = deal(&["k", "v"], rows, 300 + trial);
        let dual = trial % 2 == 0;
        let runs = run_tables(inputs, move |ctx, mut input| {
            let t = input.pop().unwrap();
            let sorted = ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)?;
            let agged = ops::op_oddeven_aggregate(
                ctx,
                &sorted,
                &["k".to_string()],
                &AggSpec {
                    func: AggFunc::Sum,
                    target: Some("v".to_string()),
                    dual,
                },
                &[],
            )?;
            let projected = ops::op_project(&agged, &["k".to_string()])?;
            ops::op_mask(ctx, &projected)
        });
        let got = opened(&runs).sorted();
        assert_eq!(got.rows, expect, "trial {trial} dual {dual}");
    }
}

#[test]
fn dual_vs_boolean_count_equivalence_and_pass_rounds() {
    let rows: Vec<Vec<u64>> = vec![vec![1], vec![1], vec![2], vec![3], vec![3], vec![3], vec![4], vec![4]];
    let run_with = |dual: bool, seed: u64| {
        let inputs = deal(&["k"], rows.clone(), seed);
        run_tables(inputs, move |ctx, mut input| {
            let t = input.pop().unwrap();
            let agged =
                ops::op_oddeven_aggregate(ctx, &t, &["k".to_string()], &count_spec(dual), &[])?;
            ops::op_mask(ctx, &agged)
        })
    };
    let boolean = run_with(false, 25);
    let dual = run_with(true, 25);
    assert_eq!(opened(&boolean).sorted().rows, opened(&dual).sorted().rows);
    // aggregation-step spans: l + 2 = 66 rounds per pass vs 4 with dual sharing
    let spans_bool = boolean[0].trace.rounds_between("agg-step-start", "agg-step-end");
    let spans_dual = dual[0].trace.rounds_between("agg-step-start", "agg-step-end");
    assert_eq!(spans_bool, vec![66, 66, 66]);
    assert_eq!(spans_dual, vec![4, 4, 4]);
}

// ---------------------------------------------------------------------------
// Distinct
// ---------------------------------------------------------------------------

#[test]
fn distinct_simple_bits() {
    let inputs = deal(&["k"], vec![vec![3], vec![3], vec![7], vec![9]], 26);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_distinct(ctx, &t, &["k".to_string()], &[])
    });
    let got = opened(&runs).sorted();
    assert_eq!(got.rows, vec![vec![3], vec![7], vec![9]]);
}

#[test]
fn distinct_second_phase_rounds_constant() {
    for (n, seed) in [(8u64, 27u64), (32, 28)] {
        let rows: Vec<Vec<u64>> = (0..n).map(|i| vec![i % 5]).collect();
        let inputs = deal(&["k"], rows, seed);
        let runs = run_tables(inputs, |ctx, mut input| {
            let t = input.pop().unwrap();
            let sorted = ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)?;
            let before = ctx.rounds();
            let distinct = {
                // second phase only: adjacent equality over the sorted keys
                let d = ops::op_distinct_second_phase(ctx, &sorted, &["k".to_string()])?;
                assert_eq!(ctx.rounds() - before, 6);
                d
            };
            Ok(distinct)
        });
        let got = opened(&runs).sorted();
        let mut expect: Vec<Vec<u64>> = (0..n.min(5)).map(|i| vec![i]).collect();
        expect.sort();
        assert_eq!(got.rows, expect);
    }
}

#[test]
fn distinct_fused_with_selection() {
    // keys [5,5,5] with selection [1,0,1]: exactly one surviving row
    let inputs = deal(&["k", "f"], vec![vec![5, 1], vec![5, 0], vec![5, 1]], 29);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let flagged = ops::op_select(
            ctx,
            &t,
            &Predicate::Cmp(CmpOp::Eq, Expr::col("f"), Expr::Const(1)),
            true,
        )?;
        let flag = flagged
            .meta
            .iter()
            .find(|m| m.kind == obliq_core::table::ColumnKind::Flag)
            .unwrap()
            .name
            .clone();
        let distinct = ops::op_distinct(ctx, &flagged, &["k".to_string()], &[flag])?;
        ops::op_mask(ctx, &distinct)
    });
    let got = opened(&runs);
    assert_eq!(got.rows.len(), 1);
    assert_eq!(got.rows[0][0], 5);
}

#[test]
fn distinct_sequential_equals_fused() {
    let mut rng = StdRng::seed_from_u64(30);
    for trial in 0..20 {
        let n = 16;
        let rows: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.gen_range(0..6), rng.gen_range(0..2)]).collect();
        let mk_inputs = |seed| deal(&["k", "f"], rows.clone(), seed);
        let phi = Predicate::Cmp(CmpOp::Eq, Expr::col("f"), Expr::Const(1));
        let phi2 = phi.clone();
        let fused = run_tables(mk_inputs(500 + trial), move |ctx, mut input| {
            let t = input.pop().unwrap();
            let flagged = ops::op_select(ctx, &t, &phi, true)?;
            let flag = flagged
                .meta
                .iter()
                .find(|m| m.kind == obliq_core::table::ColumnKind::Flag)
                .unwrap()
                .name
                .clone();
            let d = ops::op_distinct(ctx, &flagged, &["k".to_string()], &[flag])?;
            ops::op_mask(ctx, &d)
        });
        let sequential = run_tables(mk_inputs(600 + trial), move |ctx, mut input| {
            let t = input.pop().unwrap();
            let flagged = ops::op_select(ctx, &t, &phi2, true)?;
            let flag = flagged
                .meta
                .iter()
                .find(|m| m.kind == obliq_core::table::ColumnKind::Flag)
                .unwrap()
                .name
                .clone();
            let sorted = ops::op_sort(ctx, &flagged, &[SortKey::asc("k")], None)?;
            let d = ops::op_distinct_sequential(ctx, &sorted, &["k".to_string()], Some(&flag))?;
            ops::op_mask(ctx, &d)
        });
        let a = opened(&fused).sorted();
        let b = opened(&sequential).sorted();
        // compare the distinct key sets
        let keys = |t: &OpenedTable| -> Vec<u64> { t.rows.iter().map(|r| r[0]).collect() };
        assert_eq!(keys(&a), keys(&b), "trial {trial}");
    }
}

#[test]
fn distinct_sequential_rounds_grow_linearly() {
    let measure = |n: u64, seed: u64| {
        let rows: Vec<Vec<u64>> = (0..n).map(|i| vec![i % 3]).collect();
        let inputs = deal(&["k"], rows, seed);
        let runs = run_tables(inputs, |ctx, mut input| {
            let t = input.pop().unwrap();
            let sorted = ops::op_sort(ctx, &t, &[SortKey::asc("k")], None)?;
            let before = ctx.rounds();
            let d = ops::op_distinct_sequential(ctx, &sorted, &["k".to_string()], None)?;
            assert!(ctx.rounds() - before >= t.rows as u64);
            Ok(d)
        });
        rounds(&runs)
    };
    let r16 = measure(16, 31);
    let r64 = measure(64, 32);
    assert!(r64 > r16);
}

#[test]
fn distinct_sequential_all_equal_keys() {
    let inputs = deal(&["k"], vec![vec![4]; 8], 33);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let d = ops::op_distinct_sequential(ctx, &t, &["k".to_string()], None)?;
        ops::op_mask(ctx, &d)
    });
    assert_eq!(opened(&runs).rows, vec![vec![4]]);
}

// ---------------------------------------------------------------------------
// Mask & global aggregation
// ---------------------------------------------------------------------------

#[test]
fn mask_all_pass_and_all_fail() {
    for (c, keep) in [(1u64, true), (2u64, false)] {
        let inputs = deal(&["a"], vec![vec![1], vec![1]], 34 + c);
        let runs = run_tables(inputs, move |ctx, mut input| {
            let t = input.pop().unwrap();
            let s = ops::op_select(
                ctx,
                &t,
                &Predicate::Cmp(CmpOp::Eq, Expr::col("a"), Expr::Const(c)),
                true,
            )?;
            ops::op_mask(ctx, &s)
        });
        let got = opened(&runs);
        if keep {
            assert_eq!(got.rows, vec![vec![1], vec![1]]);
        } else {
            assert!(got.rows.is_empty());
        }
    }
}

#[test]
fn mask_hides_filtered_values() {
    let inputs = deal(&["a"], vec![vec![10], vec![20], vec![30]], 37);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let s = ops::op_select(
            ctx,
            &t,
            &Predicate::Cmp(CmpOp::Eq, Expr::col("a"), Expr::Const(20)),
            true,
        )?;
        ops::op_mask(ctx, &s)
    });
    // reconstruct all cells, including dropped rows: they must be sentinels
    let tables = [
        runs[0].output.clone(),
        runs[1].output.clone(),
        runs[2].output.clone(),
    ];
    let a: Vec<ShareVec> = tables.iter().map(|t| t.col("a").unwrap().clone()).collect();
    let vals =
        obliq_core::harness::open_vec(&[a[0].clone(), a[1].clone(), a[2].clone()]).unwrap();
    assert_eq!(vals[0], u64::MAX);
    assert_eq!(vals[1], 20);
    assert_eq!(vals[2], u64::MAX);
}

#[test]
fn global_sum_and_gated_count() {
    let inputs = deal(&["v", "f"], vec![vec![1, 1], vec![2, 0], vec![3, 1], vec![4, 1]], 38);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        ops::op_global_agg(
            ctx,
            &t,
            &AggSpec {
                func: AggFunc::Sum,
                target: Some("v".to_string()),
                dual: false,
            },
        )
    });
    assert_eq!(opened(&runs).rows, vec![vec![10]]);

    let inputs = deal(&["v", "f"], vec![vec![1, 1], vec![2, 0], vec![3, 1], vec![4, 1]], 39);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let s = ops::op_select(
            ctx,
            &t,
            &Predicate::Cmp(CmpOp::Eq, Expr::col("f"), Expr::Const(1)),
            true,
        )?;
        ops::op_global_agg(ctx, &s, &count_spec(true))
    });
    assert_eq!(opened(&runs).rows, vec![vec![3]]);
}

#[test]
fn global_min_of_singleton_is_free() {
    let inputs = deal(&["v"], vec![vec![42]], 40);
    let runs = run_tables(inputs, |ctx, mut input| {
        let t = input.pop().unwrap();
        let before = ctx.rounds();
        let out = ops::op_global_agg(
            ctx,
            &t,
            &AggSpec {
                func: AggFunc::Min,
                target: Some("v".to_string()),
                dual: false,
            },
        )?;
        assert_eq!(ctx.rounds(), before);
        Ok(out)
    });
    assert_eq!(opened(&runs).rows, vec![vec![42]]);
}

// ---------------------------------------------------------------------------
// Open & obliviousness
// ---------------------------------------------------------------------------

#[test]
fn open_round_trips_scanned_table() {
    let rows: Vec<Vec<u64>> = (0..4u64).map(|i| vec![i, i + 10]).collect();
    let inputs = deal(&["a", "b"], rows.clone(), 41);
    let runs = run_tables(inputs, |_, mut input| Ok(input.pop().unwrap()));
    assert_eq!(opened(&runs).rows, rows);
}

#[test]
fn traces_identical_across_value_differing_inputs() {
    let shapes = |rows: Vec<Vec<u64>>, seed: u64| {
        let inputs = deal(&["k", "v"], rows, seed);
        let runs = run_tables(inputs, |ctx, mut input| {
            let t = input.pop().unwrap();
            let s = ops::op_select(
                ctx,
                &t,
                &Predicate::Cmp(CmpOp::Gt, Expr::col("v"), Expr::Const(5)),
                true,
            )?;
            let sorted = ops::op_sort(ctx, &s, &[SortKey::asc("k")], None)?;
            let agged = ops::op_oddeven_aggregate(
                ctx,
                &sorted,
                &["k".to_string()],
                &count_spec(true),
                &[],
            )?;
            ops::op_mask(ctx, &agged)
        });
        runs.map(|r| r.trace.shape())
    };
    let a = shapes((0..8u64).map(|i| vec![i % 2, i]).collect(), 42);
    let b = shapes((0..8u64).map(|i| vec![7, 99 - i]).collect(), 43);
    assert_eq!(a, b);
}

#[test]
fn deterministic_traces_and_results() {
    let rows: Vec<Vec<u64>> = (0..8u64).map(|i| vec![i % 3]).collect();
    let run_once = || {
        let inputs = deal(&["k"], rows.clone(), 44);
        run_tables(inputs, |ctx, mut input| {
            let t = input.pop().unwrap();
            let d = ops::op_distinct(ctx, &t, &["k".to_string()], &[])?;
            ops::op_mask(ctx, &d)
        })
    };
    let a = run_once();
    let b = run_once();
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.trace.rounds, y.trace.rounds);
    }
    assert_eq!(opened(&a), opened(&b));
}

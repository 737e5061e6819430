//! Exact closed-form cost model.
//!
//! For every primitive, operator, and whole plan this module computes the
//! number of primitive MPC operations per party and the number of
//! communication rounds, as pure functions of public shape (cardinalities,
//! schema, predicate syntax, bit width). The executor counts the same
//! quantities at run time from its instrumентation; tests assert exact
//! equality between the two routes.
//!
//! Cost accounting: 1-bit boolean operations have unit cost, full-word
//! gates cost the word length, and each primitive charges its defined
//! per-element budget — equality `2l-1`, comparison `4l-3`, ripple-carry
//! addition `5l-3`, multiplexer 3, compare-and-swap `4l+3`.

use serde::Serialize;

use crate::error::EngineError;
use crate::operators::{AggFunc, AggSpec};
use crate::plan::{Catalog, Plan};
use crate::predicate::{CmpOp, Expr, Predicate};
use crate::primitives::ceil_log2;
use crate::share::WORD_BITS;

pub const L: u64 = WORD_BITS as u64;

/// (operations per party, communication rounds) of a protocol fragment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostVector {
    pub ops: u64,
    pub rounds: u64,
}

impl CostVector {
    pub fn new(ops: u64, rounds: u64) -> Self {
        CostVector { ops, rounds }
    }

    pub fn zero() -> Self {
        CostVector::default()
    }
}

impl std::ops::Add for CostVector {
    type Output = CostVector;
    fn add(self, o: CostVector) -> CostVector {
        CostVector::new(self.ops + o.ops, self.rounds + o.rounds)
    }
}

impl std::ops::AddAssign for CostVector {
    fn add_assign(&mut self, o: CostVector) {
        self.ops += o.ops;
        self.rounds += o.rounds;
    }
}

/// Deployment weights for the planner's objective `alpha*ops + beta*rounds`,
/// plus the public join batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub alpha: f64,
    pub beta: f64,
    pub batch_rows: usize,
}

impl Default for CostParams {
    fn default() -> Self {
        // one round is worth a thousand operations: wide-area deployments
        // are round-bound, so plans should prefer round reduction
        CostParams {
            alpha: 1.0,
            beta: 1000.0,
            batch_rows: 4096,
        }
    }
}

impl CostParams {
    pub fn total(&self, c: CostVector) -> f64 {
        self.alpha * c.ops as f64 + self.beta * c.rounds as f64
    }
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Xor,
    And,
    Or,
    Not,
    Eq,
    Ineq,
    Ltz,
    Mux,
    CompareSwap,
    Rca,
    ArithAdd,
    ArithMul,
    B2aBit,
}

/// Exact per-element cost of one primitive at width `l`.
pub fn cost_primitive(kind: PrimitiveKind, l: u64) -> CostVector {
    match kind {
        PrimitiveKind::Xor => CostVector::new(l, 0),
        PrimitiveKind::And | PrimitiveKind::Or => CostVector::new(l, 1),
        PrimitiveKind::Not => CostVector::zero(),
        PrimitiveKind::Eq => CostVector::new(2 * l - 1, ceil_log2(l) as u64),
        PrimitiveKind::Ineq => CostVector::new(4 * l - 3, 1 + ceil_log2(l) as u64),
        PrimitiveKind::Ltz => CostVector::zero(),
        PrimitiveKind::Mux => CostVector::new(3, 1),
        PrimitiveKind::CompareSwap => {
            let lt = cost_primitive(PrimitiveKind::Ineq, l);
            CostVector::new(lt.ops + 6, lt.rounds + 1)
        }
        PrimitiveKind::Rca => CostVector::new(5 * l - 3, l),
        PrimitiveKind::ArithAdd => CostVector::new(1, 0),
        PrimitiveKind::ArithMul => CostVector::new(1, 1),
        PrimitiveKind::B2aBit => CostVector::new(2, 2),
    }
}

fn cost_b2a_word(n: u64) -> CostVector {
    CostVector::new(192 * n, 2)
}

fn cost_a2b_word(n: u64) -> CostVector {
    CostVector::new(2 * (5 * L - 3) * n, 2 * L)
}

/// Composite comparison of one key list: `4W-3` ops per element and
/// `1 + max(ceil log2 w_i) + ceil(log2 K)` rounds.
fn composite_lt_cost(widths: &[u64], n: u64) -> CostVector {
    let w: u64 = widths.iter().sum();
    let max_lev = widths.iter().map(|&x| ceil_log2(x) as u64).max().unwrap_or(0);
    CostVector::new(
        (4 * w - 3) * n,
        1 + max_lev + ceil_log2(widths.len() as u64) as u64,
    )
}

/// Composite equality: `2W-1` ops per element and
/// `max(ceil log2 w_i) + ceil(log2 K)` rounds.
fn composite_eq_cost(widths: &[u64], n: u64) -> CostVector {
    let w: u64 = widths.iter().sum();
    let max_lev = widths.iter().map(|&x| ceil_log2(x) as u64).max().unwrap_or(0);
    CostVector::new(
        (2 * w - 1) * n,
        max_lev + ceil_log2(widths.len() as u64) as u64,
    )
}

fn fold_cost(k: u64, n: u64) -> CostVector {
    if k <= 1 {
        CostVector::zero()
    } else {
        CostVector::new((k - 1) * n, ceil_log2(k) as u64)
    }
}

// ---------------------------------------------------------------------------
// Predicates
// ---------------------------------------------------------------------------

#[derive(Default)]
struct AtomCounts {
    eq: u64,
    lt: u64,
    pro_eq: u64,
    expr: CostVector,
}

fn expr_cost(e: &Expr, n: u64) -> CostVector {
    match e {
        Expr::Col(_) | Expr::Const(_) => CostVector::zero(),
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            expr_cost(a, n) + expr_cost(b, n) + CostVector::new((5 * L - 3) * n, L)
        }
        Expr::Mul(a, b) => {
            expr_cost(a, n)
                + expr_cost(b, n)
                + cost_b2a_word(n)
                + cost_b2a_word(n)
                + CostVector::new(n, 1)
                + cost_a2b_word(n)
        }
    }
}

fn count_atoms(p: &Predicate, n: u64, acc: &mut AtomCounts) {
    match p {
        Predicate::Cmp(op, a, b) => {
            acc.expr += expr_cost(a, n) + expr_cost(b, n);
            match op {
                CmpOp::Eq | CmpOp::Ne => acc.eq += 1,
                _ => acc.lt += 1,
            }
        }
        Predicate::ProactiveCmp { op, .. } => {
            if matches!(op, CmpOp::Eq | CmpOp::Ne) {
                acc.pro_eq += 1;
            }
        }
        Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|q| count_atoms(q, n, acc)),
        Predicate::Not(q) => count_atoms(q, n, acc),
        Predicate::Bit(_) | Predicate::Const(_) => {}
    }
}

/// Rounds and ops of the combine tree over atom bits: each AND/OR node
/// reduces its children pairwise after they are evaluated in order.
fn combine_cost(p: &Predicate, n: u64) -> CostVector {
    match p {
        Predicate::Cmp(..) | Predicate::ProactiveCmp { .. } | Predicate::Bit(_) | Predicate::Const(_) => {
            CostVector::zero()
        }
        Predicate::Not(q) => combine_cost(q, n),
        Predicate::And(ps) | Predicate::Or(ps) => {
            let mut c = CostVector::zero();
            for q in ps {
                c += combine_cost(q, n);
            }
            c + fold_cost(ps.len() as u64, n)
        }
    }
}

/// Exact evaluation cost of a predicate over `n` rows. With fusion, atoms
/// of the same circuit shape share rounds; without it every atom pays its
/// own.
pub fn cost_predicate(p: &Predicate, n: u64, fused: bool) -> CostVector {
    let mut acc = AtomCounts::default();
    count_atoms(p, n, &mut acc);
    let mut c = acc.expr;
    c.ops += acc.eq * (2 * L - 1) * n + acc.lt * (4 * L - 3) * n + acc.pro_eq * n;
    if fused {
        c.rounds += if acc.eq > 0 { ceil_log2(L) as u64 } else { 0 };
        c.rounds += if acc.lt > 0 { 1 + ceil_log2(L) as u64 } else { 0 };
        c.rounds += if acc.pro_eq > 0 { 1 } else { 0 };
    } else {
        c.rounds += acc.eq * ceil_log2(L) as u64;
        c.rounds += acc.lt * (1 + ceil_log2(L) as u64);
        c.rounds += acc.pro_eq;
    }
    c + combine_cost(p, n)
}

/// The predicate a join/semi-join actually evaluates: the user condition
/// conjoined with the inputs' pending gate bits.
fn composed_with_gates(p: &Predicate, extra_bits: usize) -> Predicate {
    if extra_bits == 0 {
        return p.clone();
    }
    let mut parts = vec![p.clone()];
    for i in 0..extra_bits {
        parts.push(Predicate::Bit(format!("~gate{i}")));
    }
    Predicate::and(parts)
}

// ---------------------------------------------------------------------------
// Operator building blocks (mirroring the executor)
// ---------------------------------------------------------------------------

/// Widths of the comparator key list for a sort of `shape` on `word_keys`
/// word-sized keys, with `bit_keys` leading single-bit keys.
fn sort_cost(rows: u64, total_cols: u64, bit_keys: u64, word_keys: u64, has_arith: bool) -> CostVector {
    if rows <= 1 {
        return CostVector::zero();
    }
    let mut widths: Vec<u64> = Vec::new();
    widths.extend(std::iter::repeat(1).take(bit_keys as usize));
    widths.extend(std::iter::repeat(L).take(word_keys as usize));
    let log_n = ceil_log2(rows) as u64;
    let stages = log_n * (log_n + 1) / 2;
    let pairs = rows / 2;
    let mut per_stage = composite_lt_cost(&widths, pairs);
    per_stage.ops += 6 * total_cols * pairs;
    per_stage.rounds += 1; // the swap flush
    if has_arith {
        per_stage.ops += 2 * pairs;
        per_stage.rounds += 2; // converting the swap bits
    }
    CostVector::new(per_stage.ops * stages, per_stage.rounds * stages)
}

fn is_flag_name(name: &str) -> bool {
    name.starts_with("a_phi") || name.starts_with("a_theta") || name.starts_with("a_v")
}

fn pad(rows: usize) -> u64 {
    rows.max(1).next_power_of_two() as u64
}

/// Accumulator columns per aggregation function.
pub fn acc_cols(func: AggFunc) -> u64 {
    match func {
        AggFunc::Avg | AggFunc::MinMax => 2,
        _ => 1,
    }
}

/// Cost of one gated aggregation step over `elems` pairs with `k_acc`
/// accumulator columns.
fn agg_step_cost(spec: &AggSpec, elems: u64, k_acc: u64) -> CostVector {
    match spec.func {
        AggFunc::Count | AggFunc::Sum | AggFunc::Avg => {
            if spec.dual {
                // conversion + local add + the two products + local add
                CostVector::new(2 * elems + 5 * elems * k_acc, 4)
            } else {
                // ripple-carry adder + the two products of the multiplexer
                CostVector::new((5 * L - 3) * elems * k_acc + 3 * elems * k_acc, L + 2)
            }
        }
        AggFunc::Min | AggFunc::Max => {
            // comparison, the min/max select, and the gating select
            CostVector::new((4 * L - 3) * elems + 6 * elems, (1 + ceil_log2(L) as u64) + 2)
        }
        AggFunc::MinMax => {
            // both comparisons batched, then the two batched selects
            CostVector::new((4 * L - 3) * 2 * elems + 12 * elems, (1 + ceil_log2(L) as u64) + 2)
        }
    }
}

/// Masking `elems` rows of a table with `cols` columns toward the invalid
/// tuple: one round of per-column selects.
fn mask_rows_cost(elems: u64, cols: u64) -> CostVector {
    CostVector::new(3 * elems * cols, 1)
}

/// Cost of installing the aggregate accumulator columns.
fn init_agg_cost(spec: &AggSpec, rows: u64, preexisting: bool) -> CostVector {
    if preexisting {
        return CostVector::zero();
    }
    match spec.func {
        AggFunc::Count | AggFunc::Min | AggFunc::Max | AggFunc::MinMax => CostVector::zero(),
        AggFunc::Sum | AggFunc::Avg => {
            if spec.dual {
                cost_b2a_word(rows)
            } else {
                CostVector::zero()
            }
        }
    }
}

/// Summing each of `n` rows' `m` contributions.
fn row_sums_cost(n: u64, m: u64, dual: bool) -> CostVector {
    if dual {
        CostVector::new(n * m.saturating_sub(1), 0)
    } else {
        let mut c = CostVector::zero();
        let mut w = m;
        while w > 1 {
            let half = w / 2;
            c += CostVector::new((5 * L - 3) * n * half, L);
            w = half + w % 2;
        }
        c
    }
}

fn oddeven_cost(rows: u64, key_count: u64, spec: &AggSpec, respect: u64, total_cols: u64, preagg: bool) -> CostVector {
    let mut c = init_agg_cost(spec, rows, preagg);
    if rows <= 1 {
        return c;
    }
    let k_acc = acc_cols(spec.func);
    let widths: Vec<u64> = std::iter::repeat(L).take(key_count as usize).collect();
    let mut d = rows / 2;
    while d >= 1 {
        let pairs = rows - d;
        c += composite_eq_cost(&widths, pairs);
        if respect > 0 {
            c += fold_cost(2 * respect + 1, pairs);
        }
        c += agg_step_cost(spec, pairs, k_acc);
        c += mask_rows_cost(pairs, total_cols);
        d /= 2;
    }
    c
}

// ---------------------------------------------------------------------------
// Plan costing
// ---------------------------------------------------------------------------

/// Per-node cost entry of an explain report.
#[derive(Debug, Clone, Serialize)]
pub struct NodeCost {
    pub node: String,
    pub rows: usize,
    pub cost: CostVector,
    pub cumulative: CostVector,
}

/// Exact cost of the subtree rooted at `plan`, including the composition
/// work embedded in each operator.
pub fn cost_plan(
    plan: &Plan,
    catalog: &Catalog,
    params: &CostParams,
) -> Result<(CostVector, Vec<NodeCost>), EngineError> {
    let mut nodes = Vec::new();
    let total = cost_node(plan, catalog, params, &mut nodes)?;
    Ok((total, nodes))
}

/// Scalar objective of a plan.
pub fn plan_total(plan: &Plan, catalog: &Catalog, params: &CostParams) -> Result<f64, EngineError> {
    Ok(params.total(cost_plan(plan, catalog, params)?.0))
}

fn cost_node(
    plan: &Plan,
    catalog: &Catalog,
    params: &CostParams,
    out: &mut Vec<NodeCost>,
) -> Result<CostVector, EngineError> {
    let mut child_total = CostVector::zero();
    for c in plan.children() {
        child_total += cost_node(c, catalog, params, out)?;
    }
    let own = cost_own(plan, catalog, params)?;
    let cumulative = child_total + own;
    out.push(NodeCost {
        node: plan.name().to_string(),
        rows: plan.shape(catalog)?.rows,
        cost: own,
        cumulative,
    });
    Ok(cumulative)
}

fn cost_own(plan: &Plan, catalog: &Catalog, params: &CostParams) -> Result<CostVector, EngineError> {
    Ok(match plan {
        Plan::Scan { .. } | Plan::Project { .. } | Plan::Open { .. } => CostVector::zero(),
        Plan::Select { input, predicate, fused } => {
            let s = input.shape(catalog)?;
            let n = s.rows as u64;
            let mut c = CostVector::zero();
            // arithmetic operands convert to boolean first
            for col in predicate.columns() {
                if s.arith_cols.contains(&col) {
                    c += cost_a2b_word(n);
                }
            }
            c += cost_predicate(predicate, n, *fused);
            if s.flags > 0 {
                c += CostVector::new(n, 1); // conjoin with the pending flag
            }
            c
        }
        Plan::AdjacentSelect { input, predicate, fused } => {
            let s = input.shape(catalog)?;
            let mut c = CostVector::zero();
            for col in predicate.columns() {
                if s.arith_cols.contains(&col) {
                    c += cost_a2b_word(s.rows as u64);
                }
            }
            c + cost_predicate(predicate, s.rows.saturating_sub(1) as u64, *fused)
        }
        Plan::Join { left, right, predicate, fused } => {
            let l = left.shape(catalog)?;
            let r = right.shape(catalog)?;
            let pairs = (l.rows * r.rows) as u64;
            let composed = composed_with_gates(predicate, l.gate_bits() + r.gate_bits());
            let chunks = (pairs as usize).div_ceil(params.batch_rows.max(1)) as u64;
            let per_all = cost_predicate(&composed, pairs, *fused);
            // chunked evaluation repeats the predicate's rounds per chunk
            let one_chunk = cost_predicate(&composed, 1, *fused);
            CostVector::new(per_all.ops, one_chunk.rounds * chunks)
        }
        Plan::SemiJoin { left, right, predicate, partial, fused } => {
            let l = left.shape(catalog)?;
            let r = right.shape(catalog)?;
            let (n, m) = (l.rows as u64, r.rows as u64);
            let composed = composed_with_gates(predicate, r.gate_bits());
            let mut c = cost_predicate(&composed, n * m, *fused);
            c += fold_cost(m, n); // OR-tree over each row's m bits
            if let Some(spec) = partial {
                c += partial_cost(spec, n, m);
            }
            c
        }
        Plan::OrderBy { input, keys, gates_first, .. } => {
            let s = input.shape(catalog)?;
            let rows = pad(s.rows);
            let padded_now = rows != s.rows as u64;
            let has_valid = s.has_valid || padded_now;
            let cols = s.total_cols() as u64 + padded_now as u64;
    // keys naming protocol flag columns compare as single bits
            let named_flags = keys.iter().filter(|k| is_flag_name(&k.col)).count() as u64;
            let bit_keys = has_valid as u64
                + named_flags
                + if *gates_first { s.flags as u64 } else { 0 };
            let mut c = CostVector::zero();
            let mut arith_left = s.arith_cols.clone();
            for k in keys {
                if let Some(i) = arith_left.iter().position(|c| c == &k.col) {
                    arith_left.remove(i);
                    c += cost_a2b_word(s.rows as u64);
                }
            }
            c + sort_cost(
                rows,
                cols,
                bit_keys,
                keys.len() as u64 - named_flags,
                !arith_left.is_empty(),
            )
        }
        Plan::GroupBy { input, keys, agg, suppress_shuffle } => {
            let s = input.shape(catalog)?;
            let rows = pad(s.rows);
            let padded_now = rows != s.rows as u64;
            let has_valid = s.has_valid || padded_now;
            let cols_sorted = s.total_cols() as u64 + padded_now as u64;
            let mut c = sort_cost(
                rows,
                cols_sorted,
                has_valid as u64 + s.flags as u64,
                keys.len() as u64,
                s.has_arith(),
            );
            let preagg = s.agg_cols > 0;
            let k_acc: u64 = acc_cols(agg.func);
            let cols_after = cols_sorted + (!preagg as u64) * k_acc + !has_valid as u64;
            c += oddeven_cost(rows, keys.len() as u64, agg, s.flags as u64, cols_after, preagg);
            if !suppress_shuffle {
                let arith = s.has_arith()
                    || (agg.dual && matches!(agg.func, AggFunc::Count | AggFunc::Sum | AggFunc::Avg));
                c += sort_cost(rows, cols_after + 1, 0, 1, arith);
            }
            c
        }
        Plan::GroupBySecondPhase { input, keys, agg } => {
            let s = input.shape(catalog)?;
            let rows = pad(s.rows);
            let preagg = s.agg_cols > 0;
            let k_acc: u64 = acc_cols(agg.func);
            let cols_after = s.total_cols() as u64 + (!preagg as u64) * k_acc + !s.has_valid as u64;
            oddeven_cost(rows, keys.len() as u64, agg, s.flags as u64, cols_after, preagg)
        }
        Plan::GroupBySequential { input, keys, agg } => {
            let s = input.shape(catalog)?;
            let rows = pad(s.rows);
            let preagg = s.agg_cols > 0;
            let k_acc: u64 = acc_cols(agg.func);
            let cols_after = s.total_cols() as u64 + (!preagg as u64) * k_acc + !s.has_valid as u64;
            let mut c = init_agg_cost(agg, rows, preagg);
            if rows > 1 {
                let widths: Vec<u64> = std::iter::repeat(L).take(keys.len()).collect();
                c += composite_eq_cost(&widths, rows - 1);
                let per_step = agg_step_cost(agg, 1, k_acc) + mask_rows_cost(1, cols_after);
                c += CostVector::new(per_step.ops * (rows - 1), per_step.rounds * (rows - 1));
            }
            c
        }
        Plan::Distinct { input, keys, fused } => {
            let s = input.shape(catalog)?;
            let rows = pad(s.rows);
            let padded_now = rows != s.rows as u64;
            let has_valid = s.has_valid || padded_now;
            let cols = s.total_cols() as u64 + padded_now as u64;
            let widths: Vec<u64> = std::iter::repeat(L).take(keys.len()).collect();
            if *fused {
                let mut c = sort_cost(
                    rows,
                    cols,
                    has_valid as u64 + s.flags as u64,
                    keys.len() as u64,
                    s.has_arith(),
                );
                if rows > 1 {
                    c += composite_eq_cost(&widths, rows - 1);
                }
                if has_valid {
                    c += CostVector::new(rows, 1); // conjoin with prior valid
                }
                c
            } else {
                // sort on the keys alone, then the sequential composition
                let mut c = sort_cost(rows, cols, has_valid as u64, keys.len() as u64, s.has_arith());
                if rows > 1 {
                    c += composite_eq_cost(&widths, rows - 1);
                    c += CostVector::new(2 * rows - 3, 2 * rows - 3);
                }
                if has_valid {
                    c += CostVector::new(rows, 1);
                }
                c
            }
        }
        Plan::DistinctSecondPhase { input, keys } => {
            let s = input.shape(catalog)?;
            let rows = pad(s.rows);
            let widths: Vec<u64> = std::iter::repeat(L).take(keys.len()).collect();
            let mut c = CostVector::zero();
            if rows > 1 {
                c += composite_eq_cost(&widths, rows - 1);
            }
            if s.has_valid {
                c += CostVector::new(rows, 1);
            }
            c
        }
        Plan::Shuffle { input } => {
            let s = input.shape(catalog)?;
            let rows = pad(s.rows);
            let padded_now = rows != s.rows as u64;
            let cols = s.total_cols() as u64 + padded_now as u64 + 1;
            sort_cost(rows, cols, 0, 1, s.has_arith())
        }
        Plan::Mask { input } => {
            let s = input.shape(catalog)?;
            let n = s.rows as u64;
            let gates = s.gate_bits() as u64;
            if gates == 0 {
                return Ok(CostVector::zero());
            }
            let mut c = fold_cost(gates, n);
            if s.has_arith() {
                c += CostVector::new(2 * n, 2);
            }
            let cols = s.data_cols.len() as u64 + s.agg_cols as u64 + 1;
            c + mask_rows_cost(n, cols)
        }
        Plan::GlobalAgg { input, agg } => {
            let s = input.shape(catalog)?;
            let n = s.rows as u64;
            let gates = s.gate_bits() as u64;
            let mut c = fold_cost(gates, n);
            let gated = gates > 0;
            match agg.func {
                AggFunc::Count | AggFunc::Sum | AggFunc::Avg => {
                    if matches!(agg.func, AggFunc::Sum | AggFunc::Avg) {
                        c += if gated {
                            if agg.dual {
                                CostVector::new(2 * n, 2) + cost_b2a_word(n) + CostVector::new(n, 1)
                            } else {
                                CostVector::new(L * n, 1)
                            }
                        } else if agg.dual {
                            cost_b2a_word(n)
                        } else {
                            CostVector::zero()
                        };
                        c += row_sums_cost(1, n, agg.dual);
                    }
                    if matches!(agg.func, AggFunc::Count | AggFunc::Avg) {
                        if gated && agg.dual {
                            c += CostVector::new(2 * n, 2);
                        }
                        c += row_sums_cost(1, n, agg.dual);
                    }
                }
                AggFunc::Min | AggFunc::Max | AggFunc::MinMax => {
                    if gated {
                        c += CostVector::new(3 * n, 1);
                    }
                    let mut w = n;
                    while w > 1 {
                        let half = w / 2;
                        c += agg_step_cost(agg, half, 1);
                        w = half + w % 2;
                    }
                }
            }
            c
        }
    })
}

fn partial_cost(spec: &AggSpec, n: u64, m: u64) -> CostVector {
    match spec.func {
        AggFunc::Count => {
            let mut c = CostVector::zero();
            if spec.dual {
                c += CostVector::new(2 * n * m, 2);
            }
            c + row_sums_cost(n, m, spec.dual)
        }
        AggFunc::Sum | AggFunc::Avg => {
            let mut c = if spec.dual {
                CostVector::new(2 * n * m, 2) + cost_b2a_word(n * m) + CostVector::new(n * m, 1)
            } else {
                CostVector::new(L * n * m, 1)
            };
            c += row_sums_cost(n, m, spec.dual);
            if spec.func == AggFunc::Avg {
                if spec.dual {
                    c += CostVector::new(2 * n * m, 2);
                }
                c += row_sums_cost(n, m, spec.dual);
            }
            c
        }
        AggFunc::MinMax => CostVector::zero(),
        AggFunc::Min | AggFunc::Max => {
            let mut c = CostVector::new(3 * n * m, 1);
            let mut w = m;
            while w > 1 {
                let half = w / 2;
                c += CostVector::new((4 * L - 3 + 6) * n * half, 1 + ceil_log2(L) as u64 + 1);
                w = half + w % 2;
            }
            c
        }
    }
}

// ---------------------------------------------------------------------------
// Composition table
// ---------------------------------------------------------------------------

/// Operator kinds for the pairwise composition summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Select,
    Join,
    SemiJoin,
    GroupBy,
    Distinct,
    OrderBy,
}

/// Extra cost of applying `down` to the output of `up`, for `n` generated
/// tuples. Composition adds a constant number of boolean operations per
/// tuple; the rounds depend on the pair. Distinct applied unfused to a
/// filtering operator's output is the sequential case with `n` rounds.
pub fn cost_composition(up: OpKind, down: OpKind, n: u64) -> Result<CostVector, EngineError> {
    use OpKind::*;
    Ok(match (up, down) {
        (Select | Join | SemiJoin | GroupBy | Distinct, Distinct) => CostVector::new(n, n),
        (Distinct, Select | Join | SemiJoin) => CostVector::new(n, 1),
        (Select, Join | SemiJoin) | (Join | SemiJoin, Select) | (Select, Select) => {
            CostVector::new(n, 1)
        }
        (GroupBy, Select | Join | SemiJoin) => CostVector::new(n, 1),
        (Select | Join | SemiJoin | Distinct | GroupBy, GroupBy) => {
            CostVector::new(2 * n, 2 * ceil_log2(n) as u64)
        }
        (OrderBy, _) => CostVector::zero(),
        (_, OrderBy) => CostVector::new(6 * n, 0),
        (Join | SemiJoin, Join | SemiJoin) => CostVector::new(n, 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{CmpOp, Expr, Predicate};

    #[test]
    fn primitive_table_at_word_width() {
        assert_eq!(cost_primitive(PrimitiveKind::Eq, 64), CostVector::new(127, 6));
        assert_eq!(cost_primitive(PrimitiveKind::Ineq, 64), CostVector::new(253, 7));
        assert_eq!(
            cost_primitive(PrimitiveKind::CompareSwap, 64),
            CostVector::new(259, 8)
        );
        assert_eq!(cost_primitive(PrimitiveKind::Rca, 64), CostVector::new(317, 64));
        assert_eq!(cost_primitive(PrimitiveKind::Xor, 64).rounds, 0);
        assert_eq!(cost_primitive(PrimitiveKind::And, 64).rounds, 1);
        assert_eq!(cost_primitive(PrimitiveKind::Mux, 64), CostVector::new(3, 1));
        assert_eq!(cost_primitive(PrimitiveKind::B2aBit, 64).rounds, 2);
        assert_eq!(cost_primitive(PrimitiveKind::Ltz, 64), CostVector::zero());
    }

    #[test]
    fn predicate_examples() {
        // age > 30 AND age < 40: two fused inequalities plus one conjunction
        let range = Predicate::And(vec![
            Predicate::Cmp(CmpOp::Gt, Expr::col("age"), Expr::Const(30)),
            Predicate::Cmp(CmpOp::Lt, Expr::col("age"), Expr::Const(40)),
        ]);
        let c = cost_predicate(&range, 1, true);
        assert_eq!(c, CostVector::new(2 * 253 + 1, 7 + 1));

        // equality of two columns: the bare primitive
        let eq = Predicate::eq_cols("a", "b");
        assert_eq!(cost_predicate(&eq, 1, true), CostVector::new(127, 6));

        // constant equality on proactive shares: two local sign checks
        // and one single-bit conjunction round
        let pro = Predicate::ProactiveCmp {
            col: "a".to_string(),
            op: CmpOp::Eq,
            constant: 30,
        };
        assert_eq!(cost_predicate(&pro, 1, true), CostVector::new(1, 1));
        // proactive inequality is fully local
        let pro_lt = Predicate::ProactiveCmp {
            col: "a".to_string(),
            op: CmpOp::Gt,
            constant: 30,
        };
        assert_eq!(cost_predicate(&pro_lt, 1, true), CostVector::zero());
    }

    #[test]
    fn fusion_shares_rounds_but_not_ops() {
        let two_eqs = Predicate::And(vec![
            Predicate::eq_cols("a", "c1"),
            Predicate::eq_cols("b", "b2"),
        ]);
        let fused = cost_predicate(&two_eqs, 1, true);
        let unfused = cost_predicate(&two_eqs, 1, false);
        assert_eq!(fused.rounds, 7); // log l + 1
        assert_eq!(unfused.rounds, 13); // 2 log l + 1
        assert_eq!(fused.ops, unfused.ops);
    }

    #[test]
    fn composition_table_values() {
        // filtering into distinct without fusion: the sequential case
        let c = cost_composition(OpKind::Select, OpKind::Distinct, 64).unwrap();
        assert_eq!(c.rounds, 64);
        // adjacent filters compose with one bulk conjunction round
        let c = cost_composition(OpKind::Select, OpKind::Select, 64).unwrap();
        assert_eq!(c, CostVector::new(64, 1));
        let c = cost_composition(OpKind::Distinct, OpKind::Select, 16).unwrap();
        assert_eq!(c.rounds, 1);
        let c = cost_composition(OpKind::GroupBy, OpKind::Join, 16).unwrap();
        assert_eq!(c.rounds, 1);
        // anything into order-by costs no extra rounds
        let c = cost_composition(OpKind::Select, OpKind::OrderBy, 64).unwrap();
        assert_eq!(c.rounds, 0);
        let c = cost_composition(OpKind::OrderBy, OpKind::Select, 64).unwrap();
        assert_eq!(c, CostVector::zero());
        // gated aggregation folds two conjunction rounds into each pass
        let c = cost_composition(OpKind::Select, OpKind::GroupBy, 16).unwrap();
        assert_eq!(c.rounds, 2 * 4);
    }
}

//! Oblivious relational operators over shared tables.
//!
//! Control flow, output cardinality, and access patterns of every operator
//! depend only on public shape (cardinalities, schema, plan), never on data.
//! Filtering operators keep the cardinality and append secret-shared bits;
//! rows leave the logical result only by masking toward the invalid tuple.
//!
//! Selections conjoin their bit with an existing pending flag (the
//! one-round composition step of adjacent filtering operators); joins fold
//! both inputs' gates into the fresh join bit; semi-joins append their bit
//! beside the left input's gates. Masking conjoins whatever gates remain.

use crate::error::EngineError;
use crate::predicate::{eval_predicate, ColumnEnv, Predicate};
use crate::primitives::{self as p, BitVec, DualBitVec, KeyOperand, ShareVec};
use crate::runtime::PartyCtx;
use crate::share::{SharingMode, SENTINEL, WORD_BITS};
use crate::table::{ColumnKind, ColumnMeta, SharedTable};

pub const AGG_COL: &str = "a_g";
pub const AGG_COUNT_COL: &str = "a_g_cnt";
pub const AGG2_COL: &str = "a_g2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
    Avg,
    /// Min and max of the same column in one pass, two output columns.
    MinMax,
}

/// Aggregation spec. With `dual` set, the accumulator lives in arithmetic
/// sharing and the per-step condition bit is converted once per step, so an
/// aggregation step costs four rounds instead of the adder's `l + 2`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AggSpec {
    pub func: AggFunc,
    pub target: Option<String>,
    pub dual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SortKey {
    pub col: String,
    pub desc: bool,
}

impl SortKey {
    pub fn asc(col: &str) -> Self {
        SortKey {
            col: col.to_string(),
            desc: false,
        }
    }

    pub fn desc(col: &str) -> Self {
        SortKey {
            col: col.to_string(),
            desc: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Projection and selection
// ---------------------------------------------------------------------------

/// Keeps the named data columns; flag, valid and aggregate columns ride
/// along. Local, zero cost.
pub fn op_project(t: &SharedTable, cols: &[String]) -> Result<SharedTable, EngineError> {
    let mut keep = Vec::new();
    for c in cols {
        keep.push(t.col_index(c)?);
    }
    for (i, m) in t.meta.iter().enumerate() {
        if m.kind != ColumnKind::Data && !keep.contains(&i) {
            keep.push(i);
        }
    }
    Ok(SharedTable {
        meta: keep.iter().map(|&i| t.meta[i].clone()).collect(),
        cols: keep.iter().map(|&i| t.cols[i].clone()).collect(),
        rows: t.rows,
    })
}

fn table_env(t: &SharedTable) -> ColumnEnv<'_> {
    let mut env = ColumnEnv::new(t.rows);
    for (m, c) in t.meta.iter().zip(&t.cols) {
        env.insert(&m.name, c);
    }
    env
}

/// Appends the selection bit; a prior pending flag is conjoined in one
/// extra round.
pub fn op_select(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    phi: &Predicate,
    fused: bool,
) -> Result<SharedTable, EngineError> {
    let mut out = t.clone();
    to_boolean_for(ctx, &mut out, &phi.columns())?;
    let bit = {
        let env = table_env(&out);
        eval_predicate(ctx, phi, &env, fused)?
    };
    attach_flag(ctx, &mut out, bit)?;
    Ok(out)
}

/// Converts any of the named columns still held arithmetically to boolean
/// sharing, in place. Comparisons and sorting work on boolean shares.
fn to_boolean_for(
    ctx: &mut PartyCtx,
    t: &mut SharedTable,
    cols: &[String],
) -> Result<(), EngineError> {
    for name in cols {
        if let Ok(i) = t.col_index(name) {
            if t.meta[i].mode == SharingMode::Arithmetic {
                t.cols[i] = p::a2b(ctx, &t.cols[i])?;
                t.meta[i].mode = SharingMode::Boolean;
            }
        }
    }
    Ok(())
}

/// Conjoins `bit` with the table's pending flag, or installs it as the flag.
fn attach_flag(ctx: &mut PartyCtx, t: &mut SharedTable, bit: BitVec) -> Result<(), EngineError> {
    let prior = t.meta.iter().position(|m| m.kind == ColumnKind::Flag);
    match prior {
        Some(i) => {
            t.cols[i] = p::bit_and(ctx, &t.cols[i], &bit)?;
        }
        None => {
            let name = t.fresh_name("a_phi");
            t.push_column(
                ColumnMeta {
                    name,
                    kind: ColumnKind::Flag,
                    mode: SharingMode::Boolean,
                },
                bit,
            );
        }
    }
    Ok(())
}

/// Selection over adjacent row pairs: the bit of row i is the predicate
/// applied to rows (i, i+1); the last row's bit is 0. Predicates refer to
/// the successor row's columns with a `next.` prefix. Any prior flag is
/// consumed: pair predicates reference it explicitly where needed.
pub fn op_adjacent_select(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    phi: &Predicate,
    fused: bool,
) -> Result<SharedTable, EngineError> {
    let n = t.rows;
    if n == 0 {
        return Ok(t.clone());
    }
    let mut t = t.clone();
    to_boolean_for(ctx, &mut t, &phi.columns())?;
    let t = &t;
    let cur: Vec<usize> = (0..n - 1).collect();
    let next: Vec<usize> = (1..n).collect();
    let mut gathered: Vec<(String, ShareVec)> = Vec::new();
    for (m, c) in t.meta.iter().zip(&t.cols) {
        gathered.push((m.name.clone(), c.gather(&cur)));
        gathered.push((format!("next.{}", m.name), c.gather(&next)));
    }
    let mut env = ColumnEnv::new(n - 1);
    for (name, col) in &gathered {
        env.insert(name, col);
    }
    let bit = eval_predicate(ctx, phi, &env, fused)?;
    let mut full = bit;
    full.extend(&ShareVec::constant(ctx, 0, 1, SharingMode::Boolean));
    let mut out = t.clone();
    if let Some(i) = out.meta.iter().position(|m| m.kind == ColumnKind::Flag) {
        out.meta.remove(i);
        out.cols.remove(i);
    }
    let name = out.fresh_name("a_phi");
    out.push_column(
        ColumnMeta {
            name,
            kind: ColumnKind::Flag,
            mode: SharingMode::Boolean,
        },
        full,
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Joins
// ---------------------------------------------------------------------------

fn pair_indices(n: usize, m: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ri = Vec::with_capacity(n * m);
    let mut si = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            ri.push(i);
            si.push(j);
        }
    }
    (ri, si)
}

/// Builds the predicate that folds both inputs' pending flags and valid
/// bits into the join condition. Gate columns are referenced through
/// side-qualified names since both inputs may carry identically named
/// protocol columns.
fn compose_with_gates(theta: &Predicate, r: &SharedTable, s: &SharedTable) -> Predicate {
    let mut parts = vec![theta.clone()];
    for (side, t) in [("~l.", r), ("~r.", s)] {
        for &g in &t.gate_indices() {
            parts.push(Predicate::Bit(format!("{side}{}", t.meta[g].name)));
        }
    }
    Predicate::and(parts)
}

/// Oblivious theta-join: the cartesian product, each pair carrying the
/// secret bit of the join condition (conjoined with input gates). Pairs are
/// produced in batches of `batch_rows` to bound the working set.
pub fn op_join(
    ctx: &mut PartyCtx,
    r: &SharedTable,
    s: &SharedTable,
    theta: &Predicate,
    batch_rows: usize,
    fused: bool,
) -> Result<SharedTable, EngineError> {
    for m in &s.meta {
        if m.kind == ColumnKind::Data && r.col_index(&m.name).is_ok() {
            return Err(EngineError::SchemaMismatch(format!(
                "duplicate column {} across join inputs",
                m.name
            )));
        }
    }
    let (ri, si) = pair_indices(r.rows, s.rows);
    let total = ri.len();
    let composed = compose_with_gates(theta, r, s);

    let mut meta: Vec<ColumnMeta> = Vec::new();
    let mut cols: Vec<ShareVec> = Vec::new();
    for (m, c) in r.meta.iter().zip(&r.cols) {
        if m.kind == ColumnKind::Data {
            meta.push(m.clone());
            cols.push(c.gather(&ri));
        }
    }
    for (m, c) in s.meta.iter().zip(&s.cols) {
        if m.kind == ColumnKind::Data {
            meta.push(m.clone());
            cols.push(c.gather(&si));
        }
    }

    let mut bit = ShareVec::new(SharingMode::Boolean);
    let chunk = batch_rows.max(1);
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        let mut env = ColumnEnv::new(end - start);
        let mut gathered: Vec<(String, ShareVec)> = Vec::new();
        for (m, c) in r.meta.iter().zip(&r.cols) {
            let g = c.gather(&ri[start..end]);
            gathered.push((format!("~l.{}", m.name), g.clone()));
            gathered.push((m.name.clone(), g));
        }
        for (m, c) in s.meta.iter().zip(&s.cols) {
            let g = c.gather(&si[start..end]);
            gathered.push((format!("~r.{}", m.name), g.clone()));
            gathered.push((m.name.clone(), g));
        }
        for (name, col) in &gathered {
            env.insert(name, col);
        }
        bit.extend(&eval_predicate(ctx, &composed, &env, fused)?);
        start = end;
    }

    meta.push(ColumnMeta {
        name: "a_theta".to_string(),
        kind: ColumnKind::Flag,
        mode: SharingMode::Boolean,
    });
    cols.push(bit);
    Ok(SharedTable {
        meta,
        cols,
        rows: total,
    })
}

/// Left semi-join: |R| rows, each with the OR over all pairs of the join
/// condition (S-side gates folded in). With `partial`, the new aggregate
/// column holds the per-row partial aggregate over matching S-tuples
/// instead of relying on the OR alone.
pub fn op_semijoin(
    ctx: &mut PartyCtx,
    r: &SharedTable,
    s: &SharedTable,
    theta: &Predicate,
    partial: Option<&AggSpec>,
    fused: bool,
) -> Result<SharedTable, EngineError> {
    let (n, m) = (r.rows, s.rows);
    let (ri, si) = pair_indices(n, m);
    let mut parts = vec![theta.clone()];
    for &g in &s.gate_indices() {
        parts.push(Predicate::Bit(format!("~r.{}", s.meta[g].name)));
    }
    let composed = Predicate::and(parts);

    let mut env = ColumnEnv::new(n * m);
    let mut gathered: Vec<(String, ShareVec)> = Vec::new();
    for (mm, c) in r.meta.iter().zip(&r.cols) {
        gathered.push((mm.name.clone(), c.gather(&ri)));
    }
    for (mm, c) in s.meta.iter().zip(&s.cols) {
        let g = c.gather(&si);
        gathered.push((format!("~r.{}", mm.name), g.clone()));
        gathered.push((mm.name.clone(), g));
    }
    for (name, col) in &gathered {
        env.insert(name, col);
    }
    let pair_bits = eval_predicate(ctx, &composed, &env, fused)?;

    // OR-tree across each row's m bits: log m rounds for the whole relation
    let per_j: Vec<BitVec> = (0..m)
        .map(|j| {
            let idx: Vec<usize> = (0..n).map(|i| i * m + j).collect();
            pair_bits.gather(&idx)
        })
        .collect();
    let theta_bit = p::bit_or_fold(ctx, &per_j)?;

    let mut out = r.clone();
    let mut agg_cols: Vec<(ColumnMeta, ShareVec)> = Vec::new();
    if let Some(spec) = partial {
        agg_cols = partial_aggregate(ctx, spec, &pair_bits, s, &si, n, m)?;
    }
    out.push_column(
        ColumnMeta {
            name: out.fresh_name("a_theta"),
            kind: ColumnKind::Flag,
            mode: SharingMode::Boolean,
        },
        theta_bit,
    );
    for (meta, col) in agg_cols {
        out.push_column(meta, col);
    }
    Ok(out)
}

/// Per-row partial aggregates over the matching S-tuples, evaluated from
/// the pair bits without materializing the product.
fn partial_aggregate(
    ctx: &mut PartyCtx,
    spec: &AggSpec,
    pair_bits: &BitVec,
    s: &SharedTable,
    si: &[usize],
    n: usize,
    m: usize,
) -> Result<Vec<(ColumnMeta, ShareVec)>, EngineError> {
    let mut out = Vec::new();
    match spec.func {
        AggFunc::Count | AggFunc::Sum | AggFunc::Avg => {
            let dual = spec.dual;
            let contrib = if matches!(spec.func, AggFunc::Count) {
                bit_contribution(ctx, pair_bits, dual)?
            } else {
                let target = s.col(spec.target.as_deref().ok_or_else(|| {
                    EngineError::Plan("partial SUM needs a target column".into())
                })?)?;
                let gathered = target.gather(si);
                value_contribution(ctx, pair_bits, &gathered, dual)?
            };
            out.push((
                agg_meta(AGG_COL, dual),
                row_sums(ctx, &contrib, n, m, dual)?,
            ));
            if matches!(spec.func, AggFunc::Avg) {
                let cnt = bit_contribution(ctx, pair_bits, dual)?;
                out.push((
                    agg_meta(AGG_COUNT_COL, dual),
                    row_sums(ctx, &cnt, n, m, dual)?,
                ));
            }
        }
        AggFunc::MinMax => {
            return Err(EngineError::Plan(
                "partial min-max aggregation is not supported".into(),
            ));
        }
        AggFunc::Min | AggFunc::Max => {
            let target = s.col(spec.target.as_deref().ok_or_else(|| {
                EngineError::Plan("partial MIN/MAX needs a target column".into())
            })?)?;
            let gathered = target.gather(si);
            // non-matching pairs read as the neutral extreme
            let neutral = if spec.func == AggFunc::Min {
                i64::MAX as u64
            } else {
                i64::MIN as u64
            };
            let neutral = ShareVec::constant(ctx, neutral, n * m, SharingMode::Boolean);
            let mut vals = p::mux(ctx, pair_bits, &gathered, &neutral)?;
            let mut width = m;
            while width > 1 {
                let half = width / 2;
                let mut lo_idx = Vec::new();
                let mut hi_idx = Vec::new();
                for i in 0..n {
                    for j in 0..half {
                        lo_idx.push(i * width + j);
                        hi_idx.push(i * width + j + half);
                    }
                }
                let a = vals.gather(&lo_idx);
                let b = vals.gather(&hi_idx);
                let (mn, mx) = p::compare_swap(ctx, &a, &b)?;
                let keep = if spec.func == AggFunc::Min { mn } else { mx };
                // odd leftover columns carry over unchanged
                let mut next = ShareVec::new(SharingMode::Boolean);
                for i in 0..n {
                    let mut row = keep.slice(i * half..(i + 1) * half);
                    if width % 2 == 1 {
                        row.extend(&vals.slice(i * width + width - 1..i * width + width));
                    }
                    next.extend(&row);
                }
                vals = next;
                width = half + width % 2;
            }
            out.push((agg_meta(AGG_COL, false), vals));
        }
    }
    Ok(out)
}

fn agg_meta(name: &str, dual: bool) -> ColumnMeta {
    ColumnMeta {
        name: name.to_string(),
        kind: ColumnKind::Agg,
        mode: if dual {
            SharingMode::Arithmetic
        } else {
            SharingMode::Boolean
        },
    }
}

/// Bits as addable values: arithmetic via the two-round conversion, or the
/// boolean word itself masked to its low bit.
fn bit_contribution(ctx: &mut PartyCtx, bits: &BitVec, dual: bool) -> Result<ShareVec, EngineError> {
    if dual {
        Ok(p::b2a_bit(ctx, bits)?.arith_form)
    } else {
        Ok(bits.mask(1))
    }
}

/// Values gated by bits: arithmetic product, or boolean AND with the
/// broadcast bit.
fn value_contribution(
    ctx: &mut PartyCtx,
    bits: &BitVec,
    values: &ShareVec,
    dual: bool,
) -> Result<ShareVec, EngineError> {
    if dual {
        let b = p::b2a_bit(ctx, bits)?.arith_form;
        let v = p::b2a(ctx, values)?;
        p::arith_mul(ctx, &b, &v)
    } else {
        let bb = broadcast_bits(bits);
        p::and_gate(ctx, &bb, values)
    }
}

fn broadcast_bits(bits: &BitVec) -> ShareVec {
    ShareVec {
        lo: bits.lo.iter().map(|w| (w & 1).wrapping_neg()).collect(),
        hi: bits.hi.iter().map(|w| (w & 1).wrapping_neg()).collect(),
        mode: SharingMode::Boolean,
    }
}

/// Sums each row's m contributions. Arithmetic sums are local; boolean sums
/// use a tree of ripple-carry adders.
fn row_sums(
    ctx: &mut PartyCtx,
    contrib: &ShareVec,
    n: usize,
    m: usize,
    dual: bool,
) -> Result<ShareVec, EngineError> {
    if dual {
        ctx.charge((n * m.saturating_sub(1)) as u64, 0);
        let mut lo = vec![0u64; n];
        let mut hi = vec![0u64; n];
        for i in 0..n {
            for j in 0..m {
                lo[i] = lo[i].wrapping_add(contrib.lo[i * m + j]);
                hi[i] = hi[i].wrapping_add(contrib.hi[i * m + j]);
            }
        }
        Ok(ShareVec {
            lo,
            hi,
            mode: SharingMode::Arithmetic,
        })
    } else {
        let mut vals = contrib.clone();
        let mut width = m;
        while width > 1 {
            let half = width / 2;
            let mut lo_idx = Vec::new();
            let mut hi_idx = Vec::new();
            for i in 0..n {
                for j in 0..half {
                    lo_idx.push(i * width + j);
                    hi_idx.push(i * width + j + half);
                }
            }
            let sum = p::rca_add(ctx, &vals.gather(&lo_idx), &vals.gather(&hi_idx))?;
            let mut next = ShareVec::new(SharingMode::Boolean);
            for i in 0..n {
                let mut row = sum.slice(i * half..(i + 1) * half);
                if width % 2 == 1 {
                    row.extend(&vals.slice(i * width + width - 1..i * width + width));
                }
                next.extend(&row);
            }
            vals = next;
            width = half + width % 2;
        }
        Ok(vals)
    }
}

// ---------------------------------------------------------------------------
// Sorting and shuffling
// ---------------------------------------------------------------------------

/// Bitonic sort on the given keys. Pads to a power of two with invalid
/// tuples if needed, and puts the valid bit first (descending) so padding
/// and masked rows sink below all live rows.
pub fn op_sort(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    keys: &[SortKey],
    limit: Option<usize>,
) -> Result<SharedTable, EngineError> {
    let mut out = t.clone();
    let key_cols: Vec<String> = keys.iter().map(|k| k.col.clone()).collect();
    to_boolean_for(ctx, &mut out, &key_cols)?;
    sort_inner(ctx, &mut out, keys, true)?;
    if let Some(k) = limit {
        let k = k.min(out.rows);
        let idx: Vec<usize> = (0..k).collect();
        out = out.gather(&idx);
    }
    Ok(out)
}

/// Rows permuted by sorting on an appended column of correlated random
/// values, which is discarded afterwards. Costs exactly one sort.
pub fn op_shuffle(ctx: &mut PartyCtx, t: &SharedTable) -> Result<SharedTable, EngineError> {
    let mut out = t.clone();
    let name = out.fresh_name("a_rand");
    let mut rand_col = ShareVec::new(SharingMode::Boolean);
    for _ in 0..out.rows {
        let (lo, hi) = ctx.keys.random_share_stream();
        rand_col.push(crate::share::ReplicatedShare::new(lo, hi, SharingMode::Boolean));
    }
    out.push_column(
        ColumnMeta {
            name: name.clone(),
            kind: ColumnKind::Data,
            mode: SharingMode::Boolean,
        },
        rand_col,
    );
    sort_inner(ctx, &mut out, &[SortKey::asc(&name)], false)?;
    let i = out.col_index(&name)?;
    out.meta.remove(i);
    out.cols.remove(i);
    Ok(out)
}

fn sort_inner(
    ctx: &mut PartyCtx,
    t: &mut SharedTable,
    keys: &[SortKey],
    valid_first: bool,
) -> Result<(), EngineError> {
    let n0 = t.rows;
    if n0 <= 1 {
        return Ok(());
    }
    if !n0.is_power_of_two() {
        t.pad_with_invalid(ctx, n0.next_power_of_two() - n0);
    }
    let n = t.rows;

    let mut full_keys: Vec<SortKey> = Vec::new();
    if valid_first {
        if let Some(v) = t.valid_index() {
            let name = t.meta[v].name.clone();
            if !keys.iter().any(|k| k.col == name) {
                full_keys.push(SortKey::desc(&name));
            }
        }
    }
    full_keys.extend_from_slice(keys);

    let key_cols: Vec<(usize, bool, u32)> = full_keys
        .iter()
        .map(|k| {
            let i = t.col_index(&k.col)?;
            let width = match t.meta[i].kind {
                ColumnKind::Data | ColumnKind::Agg | ColumnKind::Derived => WORD_BITS,
                ColumnKind::Valid | ColumnKind::Flag => 1,
            };
            if t.meta[i].mode != SharingMode::Boolean {
                return Err(EngineError::ModeMismatch);
            }
            Ok((i, k.desc, width))
        })
        .collect::<Result<_, _>>()?;

    let has_arith = t.meta.iter().any(|m| m.mode == SharingMode::Arithmetic);
    let stages = bitonic_stages(n);
    for stage in stages {
        // one composite comparison for all pairs of the stage
        let mut first_ops: Vec<usize> = Vec::with_capacity(stage.len());
        let mut second_ops: Vec<usize> = Vec::with_capacity(stage.len());
        for &(i, l, ascending) in &stage {
            // swap when the upper element is smaller (ascending) or the
            // lower element is smaller (descending)
            if ascending {
                first_ops.push(l);
                second_ops.push(i);
            } else {
                first_ops.push(i);
                second_ops.push(l);
            }
        }
        let gathered: Vec<(ShareVec, ShareVec)> = key_cols
            .iter()
            .map(|&(c, _, _)| (t.cols[c].gather(&first_ops), t.cols[c].gather(&second_ops)))
            .collect();
        let operands: Vec<KeyOperand> = key_cols
            .iter()
            .zip(&gathered)
            .map(|(&(_, desc, width), (x, y))| KeyOperand {
                x,
                y,
                width,
                descending: desc,
                signed: width == WORD_BITS,
            })
            .collect();
        let swap = p::composite_lt(ctx, &operands)?;
        let charged_cols = t
            .meta
            .iter()
            .filter(|m| m.kind != ColumnKind::Derived)
            .count() as u64;
        ctx.charge(
            2 * stage.len() as u64 * charged_cols,
            4 * stage.len() as u64 * charged_cols,
        );
        let swap_arith = if has_arith {
            Some(p::b2a_bit(ctx, &swap)?)
        } else {
            None
        };
        apply_swaps(ctx, t, &stage, &swap, swap_arith.as_ref())?;
    }
    Ok(())
}

/// Comparator pairs (lower index, upper index, ascending) per stage of the
/// bitonic network: `log n (log n + 1) / 2` stages of n/2 comparators.
fn bitonic_stages(n: usize) -> Vec<Vec<(usize, usize, bool)>> {
    let mut stages = Vec::new();
    let mut k = 2;
    while k <= n {
        let mut j = k / 2;
        while j > 0 {
            let mut stage = Vec::with_capacity(n / 2);
            for i in 0..n {
                let l = i ^ j;
                if l > i {
                    stage.push((i, l, (i & k) == 0));
                }
            }
            stages.push(stage);
            j /= 2;
        }
        k *= 2;
    }
    stages
}

/// Conditionally swaps whole rows in one round: boolean columns via the
/// XOR trick, arithmetic columns via a gated difference.
fn apply_swaps(
    ctx: &mut PartyCtx,
    t: &mut SharedTable,
    stage: &[(usize, usize, bool)],
    swap: &BitVec,
    swap_arith: Option<&DualBitVec>,
) -> Result<(), EngineError> {
    let lo_idx: Vec<usize> = stage.iter().map(|&(i, _, _)| i).collect();
    let hi_idx: Vec<usize> = stage.iter().map(|&(_, l, _)| l).collect();
    let bcast = broadcast_bits(swap);

    let mut batch = p::GateBatch::new();
    let mut plan: Vec<(usize, bool)> = Vec::new(); // column, is_arith
    for (c, meta) in t.meta.iter().enumerate() {
        let a = t.cols[c].gather(&lo_idx);
        let b = t.cols[c].gather(&hi_idx);
        match meta.mode {
            SharingMode::Boolean => {
                for k in 0..stage.len() {
                    let d = crate::share::ReplicatedShare::new(
                        a.lo[k] ^ b.lo[k],
                        a.hi[k] ^ b.hi[k],
                        SharingMode::Boolean,
                    );
                    batch.push_and(ctx, bcast.get(k), d);
                }
                plan.push((c, false));
            }
            SharingMode::Arithmetic => {
                let dual = swap_arith.expect("arithmetic swap without converted bit");
                for k in 0..stage.len() {
                    let d = crate::share::ReplicatedShare::new(
                        a.lo[k].wrapping_sub(b.lo[k]),
                        a.hi[k].wrapping_sub(b.hi[k]),
                        SharingMode::Arithmetic,
                    );
                    batch.push_mul(ctx, dual.arith_form.get(k), d);
                }
                plan.push((c, true));
            }
        }
    }
    let results = batch.finish(ctx)?;
    let m = stage.len();
    for (slot, (c, is_arith)) in plan.into_iter().enumerate() {
        let deltas = &results[slot * m..(slot + 1) * m];
        if is_arith {
            for (k, d) in deltas.iter().enumerate() {
                let (i, l) = (lo_idx[k], hi_idx[k]);
                t.cols[c].lo[i] = t.cols[c].lo[i].wrapping_sub(d.lo);
                t.cols[c].hi[i] = t.cols[c].hi[i].wrapping_sub(d.hi);
                t.cols[c].lo[l] = t.cols[c].lo[l].wrapping_add(d.lo);
                t.cols[c].hi[l] = t.cols[c].hi[l].wrapping_add(d.hi);
            }
        } else {
            for (k, d) in deltas.iter().enumerate() {
                let (i, l) = (lo_idx[k], hi_idx[k]);
                t.cols[c].lo[i] ^= d.lo;
                t.cols[c].hi[i] ^= d.hi;
                t.cols[c].lo[l] ^= d.lo;
                t.cols[c].hi[l] ^= d.hi;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Distinct
// ---------------------------------------------------------------------------

/// Distinct with fused bits: sorts on (valid, fused flags, keys) so the
/// rows that pass all upstream filters form one contiguous key-sorted
/// block, then one batched adjacent-equality pass sets the new valid bit.
/// The second phase takes `ceil(log2 l)` rounds regardless of cardinality.
pub fn op_distinct(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    keys: &[String],
    fused_bits: &[String],
) -> Result<SharedTable, EngineError> {
    let mut sort_keys: Vec<SortKey> = fused_bits.iter().map(|b| SortKey::desc(b)).collect();
    sort_keys.extend(keys.iter().map(|k| SortKey::asc(k)));
    let sorted = op_sort(ctx, t, &sort_keys, None)?;
    op_distinct_second_phase(ctx, &sorted, keys)
}

/// The non-sorting half of distinct: expects input sorted so that rows
/// surviving upstream filters form a contiguous key-sorted block.
pub fn op_distinct_second_phase(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    keys: &[String],
) -> Result<SharedTable, EngineError> {
    let mut out = t.clone();
    let bit = adjacent_first_of_run(ctx, &out, keys)?;
    conjoin_valid(ctx, &mut out, bit)?;
    Ok(out)
}

/// Installs `bit` as the valid column; an existing valid bit is conjoined
/// in one round so already-dead rows (padding, masked tuples) stay dead.
fn conjoin_valid(ctx: &mut PartyCtx, t: &mut SharedTable, bit: BitVec) -> Result<(), EngineError> {
    match t.valid_index() {
        Some(i) => {
            t.cols[i] = p::bit_and(ctx, &t.cols[i], &bit)?;
        }
        None => {
            let name = t.fresh_name("a_v");
            t.push_column(
                ColumnMeta {
                    name,
                    kind: ColumnKind::Valid,
                    mode: SharingMode::Boolean,
                },
                bit,
            );
        }
    }
    Ok(())
}

/// First-of-run bits over the sorted keys: row 0 is 1, row i is
/// NOT(keys_i == keys_{i-1}). One batched equality pass.
fn adjacent_first_of_run(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    keys: &[String],
) -> Result<BitVec, EngineError> {
    let n = t.rows;
    if n <= 1 {
        return Ok(ShareVec::constant(ctx, 1, n, SharingMode::Boolean));
    }
    let cur: Vec<usize> = (1..n).collect();
    let prev: Vec<usize> = (0..n - 1).collect();
    let gathered: Vec<(ShareVec, ShareVec)> = keys
        .iter()
        .map(|k| {
            let c = t.col(k)?;
            Ok((c.gather(&cur), c.gather(&prev)))
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let operands: Vec<(&ShareVec, &ShareVec, u32)> =
        gathered.iter().map(|(a, b)| (a, b, WORD_BITS)).collect();
    let same = p::composite_eq(ctx, &operands)?;
    let mut bit = ShareVec::constant(ctx, 1, 1, SharingMode::Boolean);
    bit.extend(&p::bit_not(ctx, &same));
    Ok(bit)
}

/// Unfused baseline: the distinct bit of each tuple depends on whether an
/// earlier same-key tuple both passed the prior filter and was already
/// marked, so the scan is inherently sequential — two rounds per tuple.
/// Expects input sorted on the keys.
pub fn op_distinct_sequential(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    keys: &[String],
    prior_bit: Option<&str>,
) -> Result<SharedTable, EngineError> {
    let n = t.rows;
    let mut out = t.clone();
    if n == 0 {
        return Ok(out);
    }
    // adjacent equalities in bulk; the recurrence is what stays sequential
    let cur: Vec<usize> = (1..n).collect();
    let prev: Vec<usize> = (0..n - 1).collect();
    let gathered: Vec<(ShareVec, ShareVec)> = keys
        .iter()
        .map(|k| {
            let c = out.col(k)?;
            Ok((c.gather(&cur), c.gather(&prev)))
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let operands: Vec<(&ShareVec, &ShareVec, u32)> =
        gathered.iter().map(|(a, b)| (a, b, WORD_BITS)).collect();
    let same = if n > 1 {
        p::composite_eq(ctx, &operands)?
    } else {
        ShareVec::new(SharingMode::Boolean)
    };

    let phi = match prior_bit {
        Some(c) => out.col(c)?.clone(),
        None => ShareVec::constant(ctx, 1, n, SharingMode::Boolean),
    };
    let psi = p::bit_not(ctx, &phi);

    // v_i = !(e_i && h_{i-1}),  h_i = "run so far holds a marked, passing
    // row" — carried as z_i = !h_i = v_i && psi_i:
    //   v_i = !e_i || z_{i-1}   (one round)
    //   z_i = psi_i && v_i      (one round)
    let mut v_bits = ShareVec::constant(ctx, 1, 1, SharingMode::Boolean);
    let mut z = psi.slice(0..1);
    for i in 1..n {
        let ne = p::bit_not(ctx, &same.slice(i - 1..i));
        let v = p::bit_or(ctx, &ne, &z)?;
        v_bits.extend(&v);
        if i < n - 1 {
            z = p::bit_and(ctx, &psi.slice(i..i + 1), &v)?;
        }
    }
    conjoin_valid(ctx, &mut out, v_bits)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Group-by
// ---------------------------------------------------------------------------

/// Installs the aggregate accumulator column(s) for the spec.
fn init_agg_columns(
    ctx: &mut PartyCtx,
    t: &mut SharedTable,
    spec: &AggSpec,
) -> Result<Vec<usize>, EngineError> {
    // a partial aggregate from a decomposed join is consumed in place
    if let Ok(existing) = t.col_index(AGG_COL) {
        let want = if spec.dual && !matches!(spec.func, AggFunc::Min | AggFunc::Max) {
            SharingMode::Arithmetic
        } else {
            SharingMode::Boolean
        };
        if t.meta[existing].mode != want {
            return Err(EngineError::ModeMismatch);
        }
        let mut idx = vec![existing];
        if spec.func == AggFunc::Avg {
            idx.push(t.col_index(AGG_COUNT_COL)?);
        }
        if spec.func == AggFunc::MinMax {
            idx.push(t.col_index(AGG2_COL)?);
        }
        return Ok(idx);
    }
    let mut idx = Vec::new();
    let add = |t: &mut SharedTable, name: &str, col: ShareVec, dual: bool| {
        t.push_column(agg_meta(name, dual), col);
        t.cols.len() - 1
    };
    let one = |ctx: &mut PartyCtx, t: &SharedTable, dual: bool| {
        let mode = if dual {
            SharingMode::Arithmetic
        } else {
            SharingMode::Boolean
        };
        ShareVec::constant(ctx, 1, t.rows, mode)
    };
    let value = |ctx: &mut PartyCtx, t: &SharedTable, target: &Option<String>, dual: bool| {
        let name = target
            .as_deref()
            .ok_or_else(|| EngineError::Plan("aggregation needs a target column".into()))?;
        let col = t.col(name)?.clone();
        if dual {
            p::b2a(ctx, &col)
        } else {
            Ok(col)
        }
    };
    match spec.func {
        AggFunc::Count => {
            let col = one(ctx, t, spec.dual);
            idx.push(add(t, AGG_COL, col, spec.dual));
        }
        AggFunc::Sum | AggFunc::Min | AggFunc::Max => {
            let dual = spec.dual && spec.func == AggFunc::Sum;
            let col = value(ctx, t, &spec.target, dual)?;
            idx.push(add(t, AGG_COL, col, dual));
        }
        AggFunc::MinMax => {
            let col = value(ctx, t, &spec.target, false)?;
            idx.push(add(t, AGG_COL, col.clone(), false));
            idx.push(add(t, AGG2_COL, col, false));
        }
        AggFunc::Avg => {
            let col = value(ctx, t, &spec.target, spec.dual)?;
            idx.push(add(t, AGG_COL, col, spec.dual));
            let cnt = one(ctx, t, spec.dual);
            idx.push(add(t, AGG_COUNT_COL, cnt, spec.dual));
        }
    }
    Ok(idx)
}

/// One gated aggregation step over paired accumulator slices. Boolean
/// accumulators pay the ripple-carry adder plus two more rounds for the
/// selection products; dual-shared accumulators pay the two-round bit
/// conversion plus the two product rounds — four in total, independent of
/// the word length.
fn agg_pair_step(
    ctx: &mut PartyCtx,
    spec: &AggSpec,
    acc_lo: &[ShareVec],
    acc_hi: &[ShareVec],
    cond: &BitVec,
) -> Result<(Vec<ShareVec>, Option<DualBitVec>), EngineError> {
    match spec.func {
        AggFunc::Count | AggFunc::Sum | AggFunc::Avg => {
            let n = cond.len();
            let k = acc_lo.len();
            let mut lo_all = acc_lo[0].clone();
            let mut hi_all = acc_hi[0].clone();
            let mut cond_all = cond.clone();
            for i in 1..k {
                lo_all.extend(&acc_lo[i]);
                hi_all.extend(&acc_hi[i]);
                cond_all.extend(cond);
            }
            if spec.dual {
                let dual = p::b2a_bit(ctx, cond)?;
                let mut cond_arith = dual.arith_form.clone();
                for _ in 1..k {
                    cond_arith.extend(&dual.arith_form);
                }
                // both products of the multiplexer as written, one flush each
                let sum = p::arith_add(ctx, &lo_all, &hi_all)?;
                let p1 = p::arith_mul(ctx, &cond_arith, &sum)?;
                let not_b = arith_one_minus(ctx, &cond_arith)?;
                let p2 = p::arith_mul(ctx, &not_b, &lo_all)?;
                let all = p::arith_add(ctx, &p1, &p2)?;
                let outs = (0..k).map(|i| all.slice(i * n..(i + 1) * n)).collect();
                Ok((outs, Some(dual)))
            } else {
                let sums = p::rca_add(ctx, &lo_all, &hi_all)?;
                let muxed = mux_two_rounds(ctx, &cond_all, &[sums], &[lo_all])?;
                let outs = (0..k)
                    .map(|i| muxed[0].slice(i * n..(i + 1) * n))
                    .collect();
                Ok((outs, None))
            }
        }
        AggFunc::Min | AggFunc::Max => {
            let lo = &acc_lo[0];
            let hi = &acc_hi[0];
            let smaller_hi = p::lt(ctx, hi, lo)?;
            let chosen = if spec.func == AggFunc::Min {
                p::mux(ctx, &smaller_hi, hi, lo)?
            } else {
                p::mux(ctx, &smaller_hi, lo, hi)?
            };
            let out = p::mux(ctx, cond, &chosen, lo)?;
            Ok((vec![out], None))
        }
        AggFunc::MinMax => {
            let n = cond.len();
            // min compares (hi < lo), max compares (lo < hi); one batch
            let mut cmp_x = acc_hi[0].clone();
            cmp_x.extend(&acc_lo[1]);
            let mut cmp_y = acc_lo[0].clone();
            cmp_y.extend(&acc_hi[1]);
            let take_hi = p::lt(ctx, &cmp_x, &cmp_y)?;
            let mut his = acc_hi[0].clone();
            his.extend(&acc_hi[1]);
            let mut los = acc_lo[0].clone();
            los.extend(&acc_lo[1]);
            let chosen = p::mux(ctx, &take_hi, &his, &los)?;
            let mut cond2 = cond.clone();
            cond2.extend(cond);
            let out = p::mux(ctx, &cond2, &chosen, &los)?;
            Ok((vec![out.slice(0..n), out.slice(n..2 * n)], None))
        }
    }
}

/// b ? x : y evaluated as the two products in sequence, matching the
/// two-round accounting of the aggregation formulas.
fn mux_two_rounds(
    ctx: &mut PartyCtx,
    cond: &BitVec,
    xs: &[ShareVec],
    ys: &[ShareVec],
) -> Result<Vec<ShareVec>, EngineError> {
    ctx.charge(
        xs.iter().map(|x| x.len() as u64).sum(),
        2 * xs.iter().map(|x| x.len() as u64).sum::<u64>(),
    );
    let bb = broadcast_bits(cond);
    let nb = broadcast_bits(&p::bit_not(ctx, cond));
    let mut firsts = Vec::new();
    for x in xs {
        let mut batch = p::GateBatch::new();
        for k in 0..x.len() {
            batch.push_and(ctx, bb.get(k), x.get(k));
        }
        firsts.push(batch.finish(ctx)?);
    }
    let mut outs = Vec::new();
    for (slot, y) in ys.iter().enumerate() {
        let mut batch = p::GateBatch::new();
        for k in 0..y.len() {
            batch.push_and(ctx, nb.get(k), y.get(k));
        }
        let seconds = batch.finish(ctx)?;
        let mut out = ShareVec::new(SharingMode::Boolean);
        for (a, b) in firsts[slot].iter().zip(seconds) {
            out.push(crate::share::ReplicatedShare::new(
                a.lo ^ b.lo,
                a.hi ^ b.hi,
                SharingMode::Boolean,
            ));
        }
        outs.push(out);
    }
    Ok(outs)
}

fn arith_one_minus(ctx: &mut PartyCtx, b: &ShareVec) -> Result<ShareVec, EngineError> {
    let neg = p::arith_scale(ctx, (-1i64) as u64, b)?;
    // add public 1 to share component 1
    let mut out = neg;
    match ctx.id.0 {
        1 => out.lo.iter_mut().for_each(|w| *w = w.wrapping_add(1)),
        3 => out.hi.iter_mut().for_each(|w| *w = w.wrapping_add(1)),
        _ => {}
    }
    Ok(out)
}

/// Sequential group-by pass over a key-sorted input: aggregates each pair
/// of adjacent tuples into the later one and masks the earlier, so the last
/// tuple of every group survives with the full aggregate. Rounds are linear
/// in the cardinality. The final shuffle is a separate plan step.
pub fn op_groupby_sequential(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    keys: &[String],
    agg: &AggSpec,
) -> Result<SharedTable, EngineError> {
    let n = t.rows;
    let mut out = t.clone();
    let agg_idx = init_agg_columns(ctx, &mut out, agg)?;
    ensure_valid_col(ctx, &mut out);
    if n <= 1 {
        return Ok(out);
    }
    let cur: Vec<usize> = (0..n - 1).collect();
    let next: Vec<usize> = (1..n).collect();
    let gathered: Vec<(ShareVec, ShareVec)> = keys
        .iter()
        .map(|k| {
            let c = out.col(k)?;
            Ok((c.gather(&cur), c.gather(&next)))
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let operands: Vec<(&ShareVec, &ShareVec, u32)> =
        gathered.iter().map(|(a, b)| (a, b, WORD_BITS)).collect();
    let same = p::composite_eq(ctx, &operands)?;

    for i in 0..n - 1 {
        let b = same.slice(i..i + 1);
        let acc_lo: Vec<ShareVec> = agg_idx.iter().map(|&c| out.cols[c].slice(i..i + 1)).collect();
        let acc_hi: Vec<ShareVec> = agg_idx
            .iter()
            .map(|&c| out.cols[c].slice(i + 1..i + 2))
            .collect();
        ctx.mark("agg-step-start");
        // aggregate into the later tuple
        let (updated, dual) = agg_pair_step(ctx, agg, &acc_hi, &acc_lo, &b)?;
        ctx.mark("agg-step-end");
        for (k, &c) in agg_idx.iter().enumerate() {
            out.cols[c].scatter(&[i + 1], &updated[k]);
        }
        // mask the earlier tuple where the pair merged
        mask_rows(ctx, &mut out, &[i], &b, dual.as_ref())?;
    }
    Ok(out)
}

/// Multiplexes the given rows toward the invalid tuple where `cond` is 1
/// and clears their valid bit, all in one round.
fn mask_rows(
    ctx: &mut PartyCtx,
    t: &mut SharedTable,
    idx: &[usize],
    cond: &BitVec,
    cond_arith: Option<&DualBitVec>,
) -> Result<(), EngineError> {
    ensure_valid_col(ctx, t);
    let valid_idx = t.valid_index().unwrap();
    let charged_cols = t
        .meta
        .iter()
        .filter(|m| m.kind != ColumnKind::Derived)
        .count() as u64;
    ctx.charge(
        idx.len() as u64 * charged_cols,
        2 * idx.len() as u64 * charged_cols,
    );
    let bcast = broadcast_bits(cond);
    let mut batch = p::GateBatch::new();
    let mut plan = Vec::new();
    for (c, meta) in t.meta.iter().enumerate() {
        let cur = t.cols[c].gather(idx);
        match meta.mode {
            SharingMode::Boolean => {
                let target: ShareVec = if c == valid_idx {
                    ShareVec::constant(ctx, 0, idx.len(), SharingMode::Boolean)
                } else {
                    ShareVec::constant(ctx, SENTINEL, idx.len(), SharingMode::Boolean)
                };
                for k in 0..idx.len() {
                    let d = crate::share::ReplicatedShare::new(
                        cur.lo[k] ^ target.lo[k],
                        cur.hi[k] ^ target.hi[k],
                        SharingMode::Boolean,
                    );
                    batch.push_and(ctx, bcast.get(k), d);
                }
                plan.push((c, false, cur, target));
            }
            SharingMode::Arithmetic => {
                let dual = cond_arith.expect("masking arithmetic column without dual bit");
                let target = ShareVec::constant(ctx, SENTINEL, idx.len(), SharingMode::Arithmetic);
                for k in 0..idx.len() {
                    let d = crate::share::ReplicatedShare::new(
                        target.lo[k].wrapping_sub(cur.lo[k]),
                        target.hi[k].wrapping_sub(cur.hi[k]),
                        SharingMode::Arithmetic,
                    );
                    batch.push_mul(ctx, dual.arith_form.get(k), d);
                }
                plan.push((c, true, cur, target));
            }
        }
    }
    let results = batch.finish(ctx)?;
    let m = idx.len();
    for (slot, (c, is_arith, cur, _)) in plan.into_iter().enumerate() {
        let deltas = &results[slot * m..(slot + 1) * m];
        let mut updated = ShareVec::new(t.cols[c].mode);
        for (k, d) in deltas.iter().enumerate() {
            if is_arith {
                updated.push(crate::share::ReplicatedShare::new(
                    cur.lo[k].wrapping_add(d.lo),
                    cur.hi[k].wrapping_add(d.hi),
                    SharingMode::Arithmetic,
                ));
            } else {
                updated.push(crate::share::ReplicatedShare::new(
                    cur.lo[k] ^ d.lo,
                    cur.hi[k] ^ d.hi,
                    SharingMode::Boolean,
                ));
            }
        }
        t.cols[c].scatter(idx, &updated);
    }
    Ok(())
}

fn ensure_valid_col(ctx: &PartyCtx, t: &mut SharedTable) {
    if t.valid_index().is_none() {
        let ones = ShareVec::constant(ctx, 1, t.rows, SharingMode::Boolean);
        let name = t.fresh_name("a_v");
        t.push_column(
            ColumnMeta {
                name,
                kind: ColumnKind::Valid,
                mode: SharingMode::Boolean,
            },
            ones,
        );
    }
}

/// Log-depth aggregation over a sorted input: `log n` passes at halving
/// distances, each pass aggregating same-group pairs into the lower index
/// and masking the upper. `respect_bits` gates pairs on upstream filter
/// bits (two extra rounds per pass). Expects the input sorted on
/// (respect bits, keys) so each gated group is contiguous.
pub fn op_oddeven_aggregate(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    keys: &[String],
    agg: &AggSpec,
    respect_bits: &[String],
) -> Result<SharedTable, EngineError> {
    let n = t.rows;
    if n > 1 && !n.is_power_of_two() {
        return Err(EngineError::NonPowerOfTwo(n));
    }
    let mut out = t.clone();
    let agg_idx = init_agg_columns(ctx, &mut out, agg)?;
    ensure_valid_col(ctx, &mut out);
    if n <= 1 {
        return Ok(out);
    }

    let mut d = n / 2;
    while d >= 1 {
        let lo_idx: Vec<usize> = (0..n - d).collect();
        let hi_idx: Vec<usize> = (d..n).collect();
        // same group?
        let gathered: Vec<(ShareVec, ShareVec)> = keys
            .iter()
            .map(|k| {
                let c = out.col(k)?;
                Ok((c.gather(&lo_idx), c.gather(&hi_idx)))
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        let operands: Vec<(&ShareVec, &ShareVec, u32)> =
            gathered.iter().map(|(a, b)| (a, b, WORD_BITS)).collect();
        let same = p::composite_eq(ctx, &operands)?;
        // in the filtered result on both sides?
        let cond = if respect_bits.is_empty() {
            same
        } else {
            let mut bits = vec![same];
            for b in respect_bits {
                let c = out.col(b)?;
                bits.push(c.gather(&lo_idx));
                bits.push(c.gather(&hi_idx));
            }
            p::bit_and_fold(ctx, &bits)?
        };
        let acc_lo: Vec<ShareVec> = agg_idx.iter().map(|&c| out.cols[c].gather(&lo_idx)).collect();
        let acc_hi: Vec<ShareVec> = agg_idx.iter().map(|&c| out.cols[c].gather(&hi_idx)).collect();
        ctx.mark("agg-step-start");
        let (updated, dual) = agg_pair_step(ctx, agg, &acc_lo, &acc_hi, &cond)?;
        ctx.mark("agg-step-end");
        for (k, &c) in agg_idx.iter().enumerate() {
            out.cols[c].scatter(&lo_idx, &updated[k]);
        }
        mask_rows(ctx, &mut out, &hi_idx, &cond, dual.as_ref())?;
        d /= 2;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Masking, global aggregation
// ---------------------------------------------------------------------------

/// Masks every row that fails the conjunction of its gate bits toward the
/// invalid tuple and collapses the gates into a single valid column. Runs
/// just before opening, and only if no prior masking covered the flags.
pub fn op_mask(ctx: &mut PartyCtx, t: &SharedTable) -> Result<SharedTable, EngineError> {
    let gates = t.gate_indices();
    if gates.is_empty() {
        return Ok(t.clone());
    }
    let bits: Vec<BitVec> = gates.iter().map(|&g| t.cols[g].clone()).collect();
    let conj = p::bit_and_fold(ctx, &bits)?;
    let fail = p::bit_not(ctx, &conj);
    let mut out = SharedTable {
        meta: Vec::new(),
        cols: Vec::new(),
        rows: t.rows,
    };
    for (m, c) in t.meta.iter().zip(&t.cols) {
        if matches!(m.kind, ColumnKind::Data | ColumnKind::Agg) {
            out.meta.push(m.clone());
            out.cols.push(c.clone());
        }
    }
    let fail_arith = if out.meta.iter().any(|m| m.mode == SharingMode::Arithmetic) {
        Some(p::b2a_bit(ctx, &fail)?)
    } else {
        None
    };
    let idx: Vec<usize> = (0..t.rows).collect();
    out.push_column(
        ColumnMeta {
            name: "a_v".to_string(),
            kind: ColumnKind::Valid,
            mode: SharingMode::Boolean,
        },
        conj,
    );
    mask_rows(ctx, &mut out, &idx, &fail, fail_arith.as_ref())?;
    Ok(out)
}

/// Global aggregation: a binary tree of pairwise aggregation steps,
/// `C_s(agg) * ceil(log n)` rounds. Gate bits restrict which rows
/// contribute.
pub fn op_global_agg(
    ctx: &mut PartyCtx,
    t: &SharedTable,
    agg: &AggSpec,
) -> Result<SharedTable, EngineError> {
    let n = t.rows;
    let gates = t.gate_indices();
    let gate_bit = if gates.is_empty() {
        None
    } else {
        let bits: Vec<BitVec> = gates.iter().map(|&g| t.cols[g].clone()).collect();
        Some(p::bit_and_fold(ctx, &bits)?)
    };

    let mut out_meta: Vec<ColumnMeta> = Vec::new();
    let mut out_cols: Vec<ShareVec> = Vec::new();
    match agg.func {
        AggFunc::Count | AggFunc::Sum | AggFunc::Avg => {
            let mut parts: Vec<(String, ShareVec)> = Vec::new();
            if matches!(agg.func, AggFunc::Sum | AggFunc::Avg) {
                let target = t.col(agg.target.as_deref().ok_or_else(|| {
                    EngineError::Plan("global SUM needs a target column".into())
                })?)?;
                let gated = match &gate_bit {
                    Some(g) => value_contribution(ctx, g, target, agg.dual)?,
                    None if agg.dual => p::b2a(ctx, target)?,
                    None => target.clone(),
                };
                parts.push((AGG_COL.to_string(), gated));
            }
            if matches!(agg.func, AggFunc::Count | AggFunc::Avg) {
                let name = if agg.func == AggFunc::Count {
                    AGG_COL
                } else {
                    AGG_COUNT_COL
                };
                let ones = ShareVec::constant(
                    ctx,
                    1,
                    n,
                    if agg.dual {
                        SharingMode::Arithmetic
                    } else {
                        SharingMode::Boolean
                    },
                );
                let gated = match &gate_bit {
                    Some(g) => bit_contribution(ctx, g, agg.dual)?,
                    None => ones,
                };
                parts.push((name.to_string(), gated));
            }
            for (name, col) in parts {
                out_meta.push(agg_meta(&name, agg.dual));
                out_cols.push(row_sums(ctx, &col, 1, n, agg.dual)?);
            }
        }
        AggFunc::MinMax => {
            return Err(EngineError::Plan(
                "global min-max aggregation opens as two global aggregates".into(),
            ));
        }
        AggFunc::Min | AggFunc::Max => {
            let target = t.col(agg.target.as_deref().ok_or_else(|| {
                EngineError::Plan("global MIN/MAX needs a target column".into())
            })?)?;
            let neutral = if agg.func == AggFunc::Min {
                i64::MAX as u64
            } else {
                i64::MIN as u64
            };
            let vals = match &gate_bit {
                Some(g) => {
                    let neutral = ShareVec::constant(ctx, neutral, n, SharingMode::Boolean);
                    p::mux(ctx, g, target, &neutral)?
                }
                None => target.clone(),
            };
            let spec = AggSpec {
                func: agg.func,
                target: None,
                dual: false,
            };
            let mut acc = vals;
            while acc.len() > 1 {
                let half = acc.len() / 2;
                let lo = acc.slice(0..half);
                let hi = acc.slice(half..2 * half);
                let ones = ShareVec::constant(ctx, 1, half, SharingMode::Boolean);
                let (mut step, _) = agg_pair_step(ctx, &spec, &[lo], &[hi], &ones)?;
                let mut next = step.pop().unwrap();
                if acc.len() % 2 == 1 {
                    next.extend(&acc.slice(acc.len() - 1..acc.len()));
                }
                acc = next;
            }
            out_meta.push(agg_meta(AGG_COL, false));
            out_cols.push(acc);
        }
    }
    Ok(SharedTable {
        meta: out_meta,
        cols: out_cols,
        rows: 1,
    })
}

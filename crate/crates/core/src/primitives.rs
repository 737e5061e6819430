//! The MPC gate library, vectorized over batches.
//!
//! Every function here runs inside one party's protocol thread and operates
//! on that party's share vectors; the three parties execute them in lockstep
//! and meet at the flush barriers. All vector ops batch their messages:
//! round counts are constant in the batch size.
//!
//! Operation counters follow the protocol's cost accounting: 1-bit boolean
//! operations have unit cost, a full-word gate costs 64, and each primitive
//! charges its defined per-element budget (equality `2w-1`, comparison
//! `4w-3`, ripple-carry addition `5w-3`, multiplexer 3). Local and remote
//! ops are counted separately; communication rounds are never inferred,
//! they come from the transport trace.

use crate::error::EngineError;
use crate::runtime::PartyCtx;
use crate::share::{ReplicatedShare, ShareValue, SharingMode, WORD_BITS};

/// One party's column of replicated shares, structure-of-arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareVec {
    pub lo: Vec<ShareValue>,
    pub hi: Vec<ShareValue>,
    pub mode: SharingMode,
}

impl ShareVec {
    pub fn new(mode: SharingMode) -> Self {
        ShareVec {
            lo: Vec::new(),
            hi: Vec::new(),
            mode,
        }
    }

    pub fn from_pairs(pairs: Vec<(ShareValue, ShareValue)>, mode: SharingMode) -> Self {
        let (lo, hi) = pairs.into_iter().unzip();
        ShareVec { lo, hi, mode }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn push(&mut self, s: ReplicatedShare) {
        debug_assert_eq!(s.mode, self.mode);
        self.lo.push(s.lo);
        self.hi.push(s.hi);
    }

    pub fn get(&self, i: usize) -> ReplicatedShare {
        ReplicatedShare::new(self.lo[i], self.hi[i], self.mode)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> ShareVec {
        ShareVec {
            lo: self.lo[range.clone()].to_vec(),
            hi: self.hi[range].to_vec(),
            mode: self.mode,
        }
    }

    /// Gathers the given indices into a new vector.
    pub fn gather(&self, idx: &[usize]) -> ShareVec {
        ShareVec {
            lo: idx.iter().map(|&i| self.lo[i]).collect(),
            hi: idx.iter().map(|&i| self.hi[i]).collect(),
            mode: self.mode,
        }
    }

    /// Writes `vals[k]` back into position `idx[k]`.
    pub fn scatter(&mut self, idx: &[usize], vals: &ShareVec) {
        debug_assert_eq!(idx.len(), vals.len());
        for (k, &i) in idx.iter().enumerate() {
            self.lo[i] = vals.lo[k];
            self.hi[i] = vals.hi[k];
        }
    }

    pub fn extend(&mut self, other: &ShareVec) {
        debug_assert_eq!(self.mode, other.mode);
        self.lo.extend_from_slice(&other.lo);
        self.hi.extend_from_slice(&other.hi);
    }

    /// Constant vector known to everyone: share component 1 carries the
    /// value, the rest are zero. Works for both modes.
    pub fn constant(ctx: &PartyCtx, value: ShareValue, n: usize, mode: SharingMode) -> ShareVec {
        let (lo, hi) = match ctx.id.0 {
            1 => (value, 0),
            2 => (0, 0),
            _ => (0, value),
        };
        ShareVec {
            lo: vec![lo; n],
            hi: vec![hi; n],
            mode,
        }
    }

    /// Shifts every share word right, locally. Valid for boolean sharing.
    pub fn shr(&self, k: u32) -> ShareVec {
        ShareVec {
            lo: self.lo.iter().map(|w| w >> k).collect(),
            hi: self.hi.iter().map(|w| w >> k).collect(),
            mode: self.mode,
        }
    }

    /// Masks every share word, locally. Valid for boolean sharing.
    pub fn mask(&self, m: ShareValue) -> ShareVec {
        ShareVec {
            lo: self.lo.iter().map(|w| w & m).collect(),
            hi: self.hi.iter().map(|w| w & m).collect(),
            mode: self.mode,
        }
    }
}

/// A boolean share vector whose semantic content is bit 0 of each word;
/// upper bits are noise left over from re-sharing.
pub type BitVec = ShareVec;

/// A single-bit condition kept in both sharing modes so it composes with
/// boolean and arithmetic formulas without adder conversions.
#[derive(Debug, Clone)]
pub struct DualBitVec {
    pub bool_form: BitVec,
    pub arith_form: ShareVec,
}

pub fn width_mask(w: u32) -> ShareValue {
    if w >= WORD_BITS {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

fn check_len(x: &ShareVec, y: &ShareVec) -> Result<(), EngineError> {
    if x.len() != y.len() {
        return Err(EngineError::LengthMismatch(x.len(), y.len()));
    }
    Ok(())
}

fn check_bool(x: &ShareVec) -> Result<(), EngineError> {
    if x.mode != SharingMode::Boolean {
        return Err(EngineError::ModeMismatch);
    }
    Ok(())
}

fn check_arith(x: &ShareVec) -> Result<(), EngineError> {
    if x.mode != SharingMode::Arithmetic {
        return Err(EngineError::ModeMismatch);
    }
    Ok(())
}

/// Broadcast of a share's bit 0 to all 64 bit positions, per share word.
/// Sign-extension distributes over XOR, so this is local.
fn bcast(w: ShareValue) -> ShareValue {
    (w & 1).wrapping_neg()
}

// ---------------------------------------------------------------------------
// One-round gate batches
// ---------------------------------------------------------------------------

/// Accumulates the local product terms of AND and multiplication gates so
/// that any mix of them re-shares in a single communication round.
pub struct GateBatch {
    own: Vec<u64>,
    kinds: Vec<SharingMode>,
}

impl GateBatch {
    pub fn new() -> Self {
        GateBatch {
            own: Vec::new(),
            kinds: Vec::new(),
        }
    }

    /// Queues one boolean AND: the party's local term of `x & y`,
    /// re-randomized with a fresh zero sharing.
    pub fn push_and(&mut self, ctx: &mut PartyCtx, x: ReplicatedShare, y: ReplicatedShare) -> usize {
        let term = (x.lo & y.lo) ^ (x.lo & y.hi) ^ (x.hi & y.lo) ^ ctx.keys.zero_share_stream();
        self.own.push(term);
        self.kinds.push(SharingMode::Boolean);
        self.own.len() - 1
    }

    /// Queues one arithmetic multiplication term.
    pub fn push_mul(&mut self, ctx: &mut PartyCtx, x: ReplicatedShare, y: ReplicatedShare) -> usize {
        let term = x
            .lo
            .wrapping_mul(y.lo)
            .wrapping_add(x.lo.wrapping_mul(y.hi))
            .wrapping_add(x.hi.wrapping_mul(y.lo))
            .wrapping_add(ctx.keys.zero_share_stream_arith());
        self.own.push(term);
        self.kinds.push(SharingMode::Arithmetic);
        self.own.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.own.is_empty()
    }

    /// One flush; pairs each received predecessor term with the party's own
    /// term to form the output shares, in push order.
    pub fn finish(self, ctx: &mut PartyCtx) -> Result<Vec<ReplicatedShare>, EngineError> {
        let received = ctx.exchange(&self.own, crate::runtime::ExchangeMode::Batched)?;
        Ok(received
            .into_iter()
            .zip(self.own)
            .zip(self.kinds)
            .map(|((prev, own), mode)| ReplicatedShare::new(prev, own, mode))
            .collect())
    }
}

fn and_words(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    let mut batch = GateBatch::new();
    for i in 0..x.len() {
        batch.push_and(ctx, x.get(i), y.get(i));
    }
    let out = batch.finish(ctx)?;
    Ok(ShareVec::from_pairs(
        out.into_iter().map(|s| (s.lo, s.hi)).collect(),
        SharingMode::Boolean,
    ))
}

// ---------------------------------------------------------------------------
// Boolean gates
// ---------------------------------------------------------------------------

/// Bitwise XOR of two boolean share vectors. Local.
pub fn xor_gate(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    check_len(x, y)?;
    check_bool(x)?;
    check_bool(y)?;
    ctx.charge(64 * x.len() as u64, 0);
    Ok(xor_local(x, y))
}

fn xor_local(x: &ShareVec, y: &ShareVec) -> ShareVec {
    ShareVec {
        lo: x.lo.iter().zip(&y.lo).map(|(a, b)| a ^ b).collect(),
        hi: x.hi.iter().zip(&y.hi).map(|(a, b)| a ^ b).collect(),
        mode: SharingMode::Boolean,
    }
}

/// XOR with a public constant: share component 1 absorbs it.
pub fn xor_const(ctx: &PartyCtx, x: &ShareVec, c: ShareValue) -> ShareVec {
    let mut out = x.clone();
    match ctx.id.0 {
        1 => out.lo.iter_mut().for_each(|w| *w ^= c),
        3 => out.hi.iter_mut().for_each(|w| *w ^= c),
        _ => {}
    }
    out
}

/// Bitwise AND; one batched round for the whole vector.
pub fn and_gate(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    check_len(x, y)?;
    check_bool(x)?;
    check_bool(y)?;
    ctx.charge(0, 64 * x.len() as u64);
    and_words(ctx, x, y)
}

/// Bitwise OR via De Morgan; one round.
pub fn or_gate(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    check_len(x, y)?;
    check_bool(x)?;
    check_bool(y)?;
    ctx.charge(0, 64 * x.len() as u64);
    let nx = xor_const(ctx, x, u64::MAX);
    let ny = xor_const(ctx, y, u64::MAX);
    let n = and_words(ctx, &nx, &ny)?;
    Ok(xor_const(ctx, &n, u64::MAX))
}

/// Bitwise NOT, local.
pub fn not_gate(ctx: &PartyCtx, x: &ShareVec) -> ShareVec {
    xor_const(ctx, x, u64::MAX)
}

/// Single-bit AND on bit vectors; unit cost per element.
pub fn bit_and(ctx: &mut PartyCtx, x: &BitVec, y: &BitVec) -> Result<BitVec, EngineError> {
    check_len(x, y)?;
    ctx.charge(0, x.len() as u64);
    and_words(ctx, x, y)
}

/// Single-bit OR; unit cost per element.
pub fn bit_or(ctx: &mut PartyCtx, x: &BitVec, y: &BitVec) -> Result<BitVec, EngineError> {
    check_len(x, y)?;
    ctx.charge(0, x.len() as u64);
    let nx = xor_const(ctx, x, 1);
    let ny = xor_const(ctx, y, 1);
    let n = and_words(ctx, &nx, &ny)?;
    Ok(xor_const(ctx, &n, 1))
}

/// Single-bit XOR, local.
pub fn bit_xor(ctx: &mut PartyCtx, x: &BitVec, y: &BitVec) -> Result<BitVec, EngineError> {
    check_len(x, y)?;
    ctx.charge(x.len() as u64, 0);
    Ok(xor_local(x, y))
}

/// Single-bit NOT, local.
pub fn bit_not(ctx: &PartyCtx, x: &BitVec) -> BitVec {
    xor_const(ctx, x, 1)
}

/// Folds a list of bit vectors with AND, reducing pairwise level by level
/// so the depth is `ceil(log2(k))` rounds.
pub fn bit_and_fold(ctx: &mut PartyCtx, bits: &[BitVec]) -> Result<BitVec, EngineError> {
    bit_fold(ctx, bits, true)
}

/// Same, with OR.
pub fn bit_or_fold(ctx: &mut PartyCtx, bits: &[BitVec]) -> Result<BitVec, EngineError> {
    bit_fold(ctx, bits, false)
}

fn bit_fold(ctx: &mut PartyCtx, bits: &[BitVec], and: bool) -> Result<BitVec, EngineError> {
    assert!(!bits.is_empty());
    let mut level: Vec<BitVec> = bits.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len() / 2 + 1);
        // all pairs of this level share one round
        let mut lhs = ShareVec::new(SharingMode::Boolean);
        let mut rhs = ShareVec::new(SharingMode::Boolean);
        let mut carried = Vec::new();
        let mut chunks = level.chunks_exact(2);
        for pair in &mut chunks {
            lhs.extend(&pair[0]);
            rhs.extend(&pair[1]);
        }
        if let [odd] = chunks.remainder() {
            carried.push(odd.clone());
        }
        let folded = if and {
            bit_and(ctx, &lhs, &rhs)?
        } else {
            bit_or(ctx, &lhs, &rhs)?
        };
        let n = level[0].len();
        for i in 0..(level.len() / 2) {
            next.push(folded.slice(i * n..(i + 1) * n));
        }
        next.extend(carried);
        level = next;
    }
    Ok(level.pop().unwrap())
}

// ---------------------------------------------------------------------------
// Comparisons
// ---------------------------------------------------------------------------

/// Equality of `w`-bit strings: bit 0 of the result is 1 iff x == y.
/// `ceil(log2 w)` rounds regardless of batch size.
pub fn eq(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec, w: u32) -> Result<BitVec, EngineError> {
    check_len(x, y)?;
    check_bool(x)?;
    check_bool(y)?;
    ctx.charge(w as u64 * x.len() as u64, (w as u64 - 1) * x.len() as u64);
    let m = width_mask(w);
    // xnor, masked to the semantic width
    let same = xor_const(ctx, &xor_local(x, y), m).mask(m);
    and_tree(ctx, same, w)
}

/// AND-reduces the low `w` bits of each element down to bit 0.
fn and_tree(ctx: &mut PartyCtx, mut c: ShareVec, mut w: u32) -> Result<BitVec, EngineError> {
    while w > 1 {
        let h = w.div_ceil(2);
        let paired = w - h;
        let low = c.mask(width_mask(h));
        let high = c.shr(h).mask(width_mask(paired));
        let anded = and_words(ctx, &low.mask(width_mask(paired)), &high)?;
        // bits [paired, h) of the low half have no partner and pass through
        let pass = low.mask(width_mask(h) ^ width_mask(paired));
        c = xor_local(&anded.mask(width_mask(paired)), &pass);
        w = h;
    }
    Ok(c)
}

/// One key of a composite comparison.
pub struct KeyOperand<'a> {
    pub x: &'a ShareVec,
    pub y: &'a ShareVec,
    pub width: u32,
    pub descending: bool,
    pub signed: bool,
}

/// Lexicographic "less than" over a list of keys, most significant first.
/// Signed word keys compare in two's complement; descending keys compare
/// reversed. Rounds: `1 + ceil(log2 W)` where `W` is the total key width.
pub fn composite_lt(ctx: &mut PartyCtx, keys: &[KeyOperand]) -> Result<BitVec, EngineError> {
    assert!(!keys.is_empty());
    let n = keys[0].x.len();
    let total_w: u64 = keys.iter().map(|k| k.width as u64).sum();
    for k in keys {
        check_len(k.x, k.y)?;
        check_bool(k.x)?;
        if k.x.len() != n {
            return Err(EngineError::LengthMismatch(k.x.len(), n));
        }
    }
    ctx.charge(total_w * n as u64, (3 * total_w - 3) * n as u64);

    // Leaf round: per key, eq bits (local xnor) and candidate bits
    // c = !x & y, all keys' leaf ANDs in one flush.
    let mut eqs = Vec::new();
    let mut lhs = ShareVec::new(SharingMode::Boolean);
    let mut rhs = ShareVec::new(SharingMode::Boolean);
    for k in keys {
        let m = width_mask(k.width);
        let (mut a, mut b) = (k.x.clone(), k.y.clone());
        if k.descending {
            std::mem::swap(&mut a, &mut b);
        }
        if k.signed && k.width >= 1 {
            let sign = 1u64 << (k.width - 1);
            a = xor_const(ctx, &a, sign);
            b = xor_const(ctx, &b, sign);
        }
        a = a.mask(m);
        b = b.mask(m);
        eqs.push(xor_const(ctx, &xor_local(&a, &b), m).mask(m));
        lhs.extend(&xor_const(ctx, &a, m).mask(m)); // !x
        rhs.extend(&b);
    }
    let cand_all = and_words(ctx, &lhs, &rhs)?;
    let mut cands: Vec<ShareVec> = (0..keys.len())
        .map(|i| cand_all.slice(i * n..(i + 1) * n))
        .collect();

    // Fold within each key: windows combine at doubling distances, all keys
    // sharing rounds. After the last level, bit 0 of a key's candidate word
    // is that key's comparison result.
    //
    // Window [j, j+2d) = high [j+d, j+2d) over low [j, j+d):
    //   c' = c_hi ^ (e_hi & c),  e' = e_hi & e,
    // with the missing windows past the top reading as neutral (e=1, c=0).
    let widths: Vec<u32> = keys.iter().map(|k| k.width).collect();
    let total_levels = max_levels(&widths);
    let mut dists: Vec<u32> = vec![1; keys.len()];
    for _ in 0..total_levels {
        let mut a_lhs = ShareVec::new(SharingMode::Boolean);
        let mut a_rhs = ShareVec::new(SharingMode::Boolean);
        let mut plan = Vec::new();
        for (i, w) in widths.iter().enumerate() {
            let d = dists[i];
            if d >= *w {
                plan.push(None);
                continue;
            }
            let m = width_mask(*w);
            // top d positions of the shifted eq word become public ones
            let top = m ^ width_mask(w - d);
            let e_hi = xor_const(ctx, &eqs[i].shr(d), top);
            let c_hi = cands[i].shr(d).mask(m);
            a_lhs.extend(&e_hi);
            a_rhs.extend(&cands[i]);
            a_lhs.extend(&e_hi);
            a_rhs.extend(&eqs[i]);
            plan.push(Some(c_hi));
        }
        if a_lhs.is_empty() {
            break;
        }
        let anded = and_words(ctx, &a_lhs, &a_rhs)?;
        let mut off = 0;
        for (i, p) in plan.into_iter().enumerate() {
            if let Some(c_hi) = p {
                let m = width_mask(widths[i]);
                let ec = anded.slice(off..off + n);
                let ee = anded.slice(off + n..off + 2 * n);
                off += 2 * n;
                cands[i] = xor_local(&c_hi, &ec.mask(m)).mask(m);
                eqs[i] = ee.mask(m);
                dists[i] *= 2;
            }
        }
    }

    // Fold across keys, most significant first:
    // lt' = lt_hi ^ (eq_hi & lt_lo), eq' = eq_hi & eq_lo.
    let mut items: Vec<(ShareVec, ShareVec)> = eqs.into_iter().zip(cands).collect();
    while items.len() > 1 {
        let mut lhs = ShareVec::new(SharingMode::Boolean);
        let mut rhs = ShareVec::new(SharingMode::Boolean);
        for pair in items.chunks_exact(2) {
            let (e_hi, _) = &pair[0];
            let (e_lo, c_lo) = &pair[1];
            lhs.extend(e_hi);
            rhs.extend(c_lo);
            lhs.extend(e_hi);
            rhs.extend(e_lo);
        }
        let anded = and_words(ctx, &lhs, &rhs)?;
        let mut next = Vec::new();
        for (i, pair) in items.chunks_exact(2).enumerate() {
            let ec = anded.slice(i * 2 * n..i * 2 * n + n);
            let ee = anded.slice(i * 2 * n + n..(i + 1) * 2 * n);
            next.push((ee, xor_local(&pair[0].1, &ec)));
        }
        if items.len() % 2 == 1 {
            next.push(items.pop().unwrap());
        }
        items = next;
    }
    Ok(items.pop().unwrap().1.mask(1))
}

fn max_levels(widths: &[u32]) -> u32 {
    widths.iter().map(|w| ceil_log2(*w as u64)).max().unwrap_or(0)
}

/// Equality over a composite key, most significant first: 1 iff all keys
/// agree. The per-key bit trees share rounds, so the depth is
/// `max(ceil log2 w_i) + ceil(log2 #keys)`.
pub fn composite_eq(
    ctx: &mut PartyCtx,
    keys: &[(&ShareVec, &ShareVec, u32)],
) -> Result<BitVec, EngineError> {
    assert!(!keys.is_empty());
    let n = keys[0].0.len();
    let total_w: u64 = keys.iter().map(|k| k.2 as u64).sum();
    for (x, y, _) in keys {
        check_len(x, y)?;
        check_bool(x)?;
    }
    ctx.charge(total_w * n as u64, (total_w - 1) * n as u64);

    let mut sames: Vec<ShareVec> = keys
        .iter()
        .map(|(x, y, w)| {
            let m = width_mask(*w);
            xor_const(ctx, &xor_local(x, y), m).mask(m)
        })
        .collect();
    let mut widths: Vec<u32> = keys.iter().map(|k| k.2).collect();
    while max_levels(&widths) > 0 {
        let mut lhs = ShareVec::new(SharingMode::Boolean);
        let mut rhs = ShareVec::new(SharingMode::Boolean);
        let mut plan = Vec::new();
        for (i, w) in widths.iter().enumerate() {
            if *w <= 1 {
                plan.push(None);
                continue;
            }
            let h = w.div_ceil(2);
            let paired = *w - h;
            let pm = width_mask(paired);
            lhs.extend(&sames[i].mask(pm));
            rhs.extend(&sames[i].shr(h).mask(pm));
            plan.push(Some((h, paired)));
        }
        let anded = and_words(ctx, &lhs, &rhs)?;
        let mut off = 0;
        for (i, p) in plan.into_iter().enumerate() {
            if let Some((h, paired)) = p {
                let pm = width_mask(paired);
                let pass = width_mask(h) ^ pm;
                let folded = anded.slice(off..off + n);
                off += n;
                sames[i] = xor_local(&folded.mask(pm), &sames[i].mask(pass));
                widths[i] = h;
            }
        }
    }
    if sames.len() == 1 {
        return Ok(sames.pop().unwrap().mask(1));
    }
    let bits: Vec<BitVec> = sames.into_iter().map(|s| s.mask(1)).collect();
    bit_and_fold_uncharged(ctx, &bits)
}

fn bit_and_fold_uncharged(ctx: &mut PartyCtx, bits: &[BitVec]) -> Result<BitVec, EngineError> {
    let mut level: Vec<BitVec> = bits.to_vec();
    while level.len() > 1 {
        let mut lhs = ShareVec::new(SharingMode::Boolean);
        let mut rhs = ShareVec::new(SharingMode::Boolean);
        let mut chunks = level.chunks_exact(2);
        for pair in &mut chunks {
            lhs.extend(&pair[0]);
            rhs.extend(&pair[1]);
        }
        let carried: Vec<BitVec> = chunks.remainder().to_vec();
        let folded = and_words(ctx, &lhs, &rhs)?;
        let n = level[0].len();
        let mut next: Vec<BitVec> = (0..level.len() / 2)
            .map(|i| folded.slice(i * n..(i + 1) * n))
            .collect();
        next.extend(carried);
        level = next;
    }
    Ok(level.pop().unwrap())
}

/// Signed less-than of two 64-bit vectors. `1 + ceil(log2 w)` rounds.
pub fn lt(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<BitVec, EngineError> {
    lt_w(ctx, x, y, WORD_BITS)
}

/// Width-parameterized signed less-than (test widths use w < 64).
pub fn lt_w(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec, w: u32) -> Result<BitVec, EngineError> {
    composite_lt(
        ctx,
        &[KeyOperand {
            x,
            y,
            width: w,
            descending: false,
            signed: true,
        }],
    )
}

/// Sign-bit extraction: 1 iff x < 0. Local, zero rounds.
pub fn ltz(ctx: &mut PartyCtx, x: &ShareVec) -> Result<BitVec, EngineError> {
    ltz_w(ctx, x, WORD_BITS)
}

pub fn ltz_w(_ctx: &mut PartyCtx, x: &ShareVec, w: u32) -> Result<BitVec, EngineError> {
    check_bool(x)?;
    Ok(x.shr(w - 1).mask(1))
}

// ---------------------------------------------------------------------------
// Multiplexers and compare-and-swap
// ---------------------------------------------------------------------------

/// Per-element select: returns x where bit b = 1, y where b = 0. One round.
pub fn mux(ctx: &mut PartyCtx, b: &BitVec, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    check_len(x, y)?;
    check_len(b, x)?;
    check_bool(x)?;
    ctx.charge(x.len() as u64, 2 * x.len() as u64);
    mux_raw(ctx, b, x, y)
}

/// Mux without charging, for callers that account at a coarser granularity.
/// Computed as y ^ (b & (x ^ y)): one AND round.
fn mux_raw(ctx: &mut PartyCtx, b: &BitVec, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    let d = xor_local(x, y);
    let bb = ShareVec {
        lo: b.lo.iter().map(|w| bcast(*w)).collect(),
        hi: b.hi.iter().map(|w| bcast(*w)).collect(),
        mode: SharingMode::Boolean,
    };
    let gated = and_words(ctx, &bb, &d)?;
    Ok(xor_local(y, &gated))
}

/// Per-element (min, max) under signed order.
/// `C_o(ineq) + 6` ops, `C_s(ineq) + 1` rounds.
pub fn compare_swap(
    ctx: &mut PartyCtx,
    x: &ShareVec,
    y: &ShareVec,
) -> Result<(ShareVec, ShareVec), EngineError> {
    check_len(x, y)?;
    let b = lt(ctx, x, y)?;
    ctx.charge(2 * x.len() as u64, 4 * x.len() as u64);
    // both muxes in one round
    let mut sel = b.clone();
    sel.extend(&b);
    let mut xs = x.clone();
    xs.extend(y);
    let mut ys = y.clone();
    ys.extend(x);
    let out = mux_raw(ctx, &sel, &xs, &ys)?;
    Ok((out.slice(0..x.len()), out.slice(x.len()..2 * x.len())))
}

// ---------------------------------------------------------------------------
// Boolean addition
// ---------------------------------------------------------------------------

/// Ripple-carry addition of boolean-shared integers, mod 2^w.
/// `5w-3` ops in `w` rounds; the whole batch shares each round.
pub fn rca_add(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    rca_add_w(ctx, x, y, WORD_BITS, false)
}

/// Width-parameterized ripple-carry adder. With `carry_in`, computes
/// x + y + 1 (used for subtraction via complement).
pub fn rca_add_w(
    ctx: &mut PartyCtx,
    x: &ShareVec,
    y: &ShareVec,
    w: u32,
    carry_in: bool,
) -> Result<ShareVec, EngineError> {
    check_len(x, y)?;
    check_bool(x)?;
    check_bool(y)?;
    let n = x.len() as u64;
    ctx.charge((3 * w as u64 - 2) * n, (2 * w as u64 - 1) * n);

    let p = xor_local(x, y);
    // step 0: c_0 = x_0 & y_0 (plus p_0 when there is a carry-in)
    let x0 = x.mask(1);
    let y0 = y.mask(1);
    let mut carry = and_words(ctx, &x0, &y0)?.mask(1);
    if carry_in {
        carry = xor_local(&carry, &p.mask(1));
    }
    let mut carries = carry.clone(); // bit i of `carries` is c_i
    for i in 1..w {
        // c_i = (x_i & y_i) ^ (p_i & c_{i-1}), both ANDs in one round
        let xi = x.shr(i).mask(1);
        let yi = y.shr(i).mask(1);
        let pi = p.shr(i).mask(1);
        let mut lhs = xi;
        lhs.extend(&pi);
        let mut rhs = yi;
        rhs.extend(&carry);
        let anded = and_words(ctx, &lhs, &rhs)?;
        let g = anded.slice(0..x.len()).mask(1);
        let pc = anded.slice(x.len()..2 * x.len()).mask(1);
        carry = xor_local(&g, &pc);
        let shifted = ShareVec {
            lo: carry.lo.iter().map(|v| v << i).collect(),
            hi: carry.hi.iter().map(|v| v << i).collect(),
            mode: SharingMode::Boolean,
        };
        carries = xor_local(&carries, &shifted);
    }
    // s = p ^ (c << 1), plus the carry-in at bit 0
    let shifted = ShareVec {
        lo: carries.lo.iter().map(|v| (v << 1) & width_mask(w)).collect(),
        hi: carries.hi.iter().map(|v| (v << 1) & width_mask(w)).collect(),
        mode: SharingMode::Boolean,
    };
    let mut s = xor_local(&p, &shifted);
    if carry_in {
        s = xor_const(ctx, &s, 1);
    }
    Ok(s.mask(width_mask(w)))
}

/// Boolean subtraction x - y via complement-and-add. Same cost as addition.
pub fn rca_sub(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    let ny = not_gate(ctx, y);
    rca_add_w(ctx, x, &ny, WORD_BITS, true)
}

// ---------------------------------------------------------------------------
// Arithmetic gates
// ---------------------------------------------------------------------------

/// Addition of arithmetic shares, local.
pub fn arith_add(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    check_len(x, y)?;
    check_arith(x)?;
    check_arith(y)?;
    ctx.charge(x.len() as u64, 0);
    Ok(ShareVec {
        lo: x.lo.iter().zip(&y.lo).map(|(a, b)| a.wrapping_add(*b)).collect(),
        hi: x.hi.iter().zip(&y.hi).map(|(a, b)| a.wrapping_add(*b)).collect(),
        mode: SharingMode::Arithmetic,
    })
}

/// Scaling by a public constant, local.
pub fn arith_scale(ctx: &mut PartyCtx, c: ShareValue, x: &ShareVec) -> Result<ShareVec, EngineError> {
    check_arith(x)?;
    ctx.charge(x.len() as u64, 0);
    Ok(ShareVec {
        lo: x.lo.iter().map(|a| a.wrapping_mul(c)).collect(),
        hi: x.hi.iter().map(|a| a.wrapping_mul(c)).collect(),
        mode: SharingMode::Arithmetic,
    })
}

/// Multiplication of arithmetic shares; one round per batch.
pub fn arith_mul(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    check_len(x, y)?;
    check_arith(x)?;
    check_arith(y)?;
    ctx.charge(0, x.len() as u64);
    let mut batch = GateBatch::new();
    for i in 0..x.len() {
        batch.push_mul(ctx, x.get(i), y.get(i));
    }
    let out = batch.finish(ctx)?;
    Ok(ShareVec::from_pairs(
        out.into_iter().map(|s| (s.lo, s.hi)).collect(),
        SharingMode::Arithmetic,
    ))
}

/// Arithmetic sharing of the bit each party can lift locally from its own
/// boolean share components: component i of the boolean sharing, placed as
/// arithmetic component i, zeros elsewhere.
fn lift_component(ctx: &PartyCtx, b: &BitVec, component: u8) -> ShareVec {
    let n = b.len();
    let mut lo = vec![0u64; n];
    let mut hi = vec![0u64; n];
    // party p holds boolean components (w_p, w_{p+1})
    let p = ctx.id.0;
    if component == p {
        lo = b.lo.iter().map(|w| w & 1).collect();
    }
    if component == p % 3 + 1 {
        hi = b.hi.iter().map(|w| w & 1).collect();
    }
    ShareVec {
        lo,
        hi,
        mode: SharingMode::Arithmetic,
    }
}

/// Converts single-bit boolean shares to arithmetic shares of the same bit
/// in exactly two rounds, keeping both forms.
///
/// Uses x ^ y = x + y - 2xy over the three locally liftable components.
pub fn b2a_bit(ctx: &mut PartyCtx, b: &BitVec) -> Result<DualBitVec, EngineError> {
    check_bool(b)?;
    ctx.charge(0, 2 * b.len() as u64);
    let c1 = lift_component(ctx, b, 1);
    let c2 = lift_component(ctx, b, 2);
    let c3 = lift_component(ctx, b, 3);
    let m = arith_mul_uncharged(ctx, &c1, &c2)?;
    // z = c1 + c2 - 2m
    let z = add3(&c1, &c2, &arith_scale_raw(&m, (-2i64) as u64));
    let m2 = arith_mul_uncharged(ctx, &z, &c3)?;
    let arith = add3(&z, &c3, &arith_scale_raw(&m2, (-2i64) as u64));
    Ok(DualBitVec {
        bool_form: b.clone(),
        arith_form: arith,
    })
}

fn arith_mul_uncharged(ctx: &mut PartyCtx, x: &ShareVec, y: &ShareVec) -> Result<ShareVec, EngineError> {
    let mut batch = GateBatch::new();
    for i in 0..x.len() {
        batch.push_mul(ctx, x.get(i), y.get(i));
    }
    let out = batch.finish(ctx)?;
    Ok(ShareVec::from_pairs(
        out.into_iter().map(|s| (s.lo, s.hi)).collect(),
        SharingMode::Arithmetic,
    ))
}

fn arith_scale_raw(x: &ShareVec, c: u64) -> ShareVec {
    ShareVec {
        lo: x.lo.iter().map(|a| a.wrapping_mul(c)).collect(),
        hi: x.hi.iter().map(|a| a.wrapping_mul(c)).collect(),
        mode: SharingMode::Arithmetic,
    }
}

fn add3(a: &ShareVec, b: &ShareVec, c: &ShareVec) -> ShareVec {
    ShareVec {
        lo: a
            .lo
            .iter()
            .zip(&b.lo)
            .zip(&c.lo)
            .map(|((x, y), z)| x.wrapping_add(*y).wrapping_add(*z))
            .collect(),
        hi: a
            .hi
            .iter()
            .zip(&b.hi)
            .zip(&c.hi)
            .map(|((x, y), z)| x.wrapping_add(*y).wrapping_add(*z))
            .collect(),
        mode: SharingMode::Arithmetic,
    }
}

/// Boolean-to-arithmetic conversion of full words: every bit goes through
/// the two-round single-bit protocol (batched), then a weighted sum
/// assembles the word locally. Two rounds total.
pub fn b2a(ctx: &mut PartyCtx, x: &ShareVec) -> Result<ShareVec, EngineError> {
    check_bool(x)?;
    let n = x.len();
    ctx.charge(64 * n as u64, 128 * n as u64);
    let mut bits = ShareVec::new(SharingMode::Boolean);
    for j in 0..WORD_BITS {
        bits.extend(&x.shr(j).mask(1));
    }
    let c1 = lift_component(ctx, &bits, 1);
    let c2 = lift_component(ctx, &bits, 2);
    let c3 = lift_component(ctx, &bits, 3);
    let m = arith_mul_uncharged(ctx, &c1, &c2)?;
    let z = add3(&c1, &c2, &arith_scale_raw(&m, (-2i64) as u64));
    let m2 = arith_mul_uncharged(ctx, &z, &c3)?;
    let all = add3(&z, &c3, &arith_scale_raw(&m2, (-2i64) as u64));
    let mut out = ShareVec {
        lo: vec![0u64; n],
        hi: vec![0u64; n],
        mode: SharingMode::Arithmetic,
    };
    for j in 0..WORD_BITS as usize {
        for i in 0..n {
            out.lo[i] = out.lo[i].wrapping_add(all.lo[j * n + i] << j);
            out.hi[i] = out.hi[i].wrapping_add(all.hi[j * n + i] << j);
        }
    }
    Ok(out)
}

/// Arithmetic-to-boolean conversion: boolean-share the three arithmetic
/// components locally, then add them with two ripple-carry passes.
pub fn a2b(ctx: &mut PartyCtx, x: &ShareVec) -> Result<ShareVec, EngineError> {
    check_arith(x)?;
    let n = x.len();
    let mut comps = Vec::new();
    for c in 1..=3u8 {
        let p = ctx.id.0;
        let mut lo = vec![0u64; n];
        let mut hi = vec![0u64; n];
        if c == p {
            lo.copy_from_slice(&x.lo);
        }
        if c == p % 3 + 1 {
            hi.copy_from_slice(&x.hi);
        }
        comps.push(ShareVec {
            lo,
            hi,
            mode: SharingMode::Boolean,
        });
    }
    let t = rca_add(ctx, &comps[0], &comps[1])?;
    rca_add(ctx, &t, &comps[2])
}

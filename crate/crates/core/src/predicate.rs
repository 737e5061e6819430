//! Predicate trees and their oblivious evaluation.
//!
//! Evaluation cost in operations and rounds is a pure function of the tree
//! shape and the bit width, never of data. With fusion enabled (the
//! default), independent atoms of the same circuit shape evaluate in shared
//! rounds by concatenating their operand vectors; without it each atom pays
//! its own rounds, which is the measured baseline for the fusion rewrite.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::EngineError;
use crate::primitives::{self as p, BitVec, ShareVec};
use crate::runtime::PartyCtx;
use crate::share::{ProactiveKind, ShareValue, SharingMode, WORD_BITS};

/// Value expression over a row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Col(String),
    Const(ShareValue),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn col(name: &str) -> Expr {
        Expr::Col(name.to_string())
    }

    pub fn is_simple(&self) -> bool {
        matches!(self, Expr::Col(_) | Expr::Const(_))
    }

    pub fn columns(&self, out: &mut Vec<String>) {
        match self {
            Expr::Col(c) => out.push(c.clone()),
            Expr::Const(_) => {}
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.columns(out);
                b.columns(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predicate {
    Cmp(CmpOp, Expr, Expr),
    /// Comparison of a column against a public constant backed by
    /// owner-provided difference shares: the sign checks are local.
    ProactiveCmp {
        col: String,
        op: CmpOp,
        constant: ShareValue,
    },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
    /// Reference to a stored single-bit column.
    Bit(String),
    Const(bool),
}

impl Predicate {
    pub fn and(preds: Vec<Predicate>) -> Predicate {
        let mut flat = Vec::new();
        for p in preds {
            match p {
                Predicate::And(inner) => flat.extend(inner),
                Predicate::Const(true) => {}
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Predicate::Const(true),
            1 => flat.pop().unwrap(),
            _ => Predicate::And(flat),
        }
    }

    pub fn eq_cols(a: &str, b: &str) -> Predicate {
        Predicate::Cmp(CmpOp::Eq, Expr::col(a), Expr::col(b))
    }

    pub fn columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk_columns(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn walk_columns(&self, out: &mut Vec<String>) {
        match self {
            Predicate::Cmp(_, a, b) => {
                a.columns(out);
                b.columns(out);
            }
            Predicate::ProactiveCmp { col, .. } => out.push(col.clone()),
            Predicate::And(ps) | Predicate::Or(ps) => {
                for p in ps {
                    p.walk_columns(out);
                }
            }
            Predicate::Not(p) => p.walk_columns(out),
            Predicate::Bit(c) => out.push(c.clone()),
            Predicate::Const(_) => {}
        }
    }
}

/// Name of the proactive difference column for `col` and constant `c`.
pub fn proactive_col_name(col: &str, kind: ProactiveKind, c: ShareValue) -> String {
    match kind {
        ProactiveKind::MinusConst => format!("{col}~m{c}"),
        ProactiveKind::ConstMinus => format!("{col}~r{c}"),
        ProactiveKind::PlusConst => format!("{col}~p{c}"),
    }
}

/// Resolves column names to one party's share vectors for one evaluation.
pub struct ColumnEnv<'a> {
    cols: BTreeMap<String, &'a ShareVec>,
    n: usize,
}

impl<'a> ColumnEnv<'a> {
    pub fn new(n: usize) -> Self {
        ColumnEnv {
            cols: BTreeMap::new(),
            n,
        }
    }

    pub fn insert(&mut self, name: &str, col: &'a ShareVec) {
        self.cols.insert(name.to_string(), col);
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn get(&self, name: &str) -> Result<&'a ShareVec, EngineError> {
        self.cols
            .get(name)
            .copied()
            .ok_or_else(|| EngineError::UnknownColumn(name.to_string()))
    }
}

// One comparison atom queued for shape-batched evaluation.
enum AtomPlan {
    EqShape { negate: bool },
    LtShape { negate: bool },
    ProactiveEq { negate: bool },
    Ready(BitVec),
}

struct AtomBatches {
    eq_lhs: ShareVec,
    eq_rhs: ShareVec,
    lt_lhs: ShareVec,
    lt_rhs: ShareVec,
    pro_lhs: BitVec,
    pro_rhs: BitVec,
}

/// Evaluates a predicate over the environment, one bit per row.
pub fn eval_predicate(
    ctx: &mut PartyCtx,
    pred: &Predicate,
    env: &ColumnEnv,
    fused: bool,
) -> Result<BitVec, EngineError> {
    if fused {
        let mut batches = AtomBatches {
            eq_lhs: ShareVec::new(SharingMode::Boolean),
            eq_rhs: ShareVec::new(SharingMode::Boolean),
            lt_lhs: ShareVec::new(SharingMode::Boolean),
            lt_rhs: ShareVec::new(SharingMode::Boolean),
            pro_lhs: ShareVec::new(SharingMode::Boolean),
            pro_rhs: ShareVec::new(SharingMode::Boolean),
        };
        let mut plans = Vec::new();
        collect_atoms(ctx, pred, env, &mut batches, &mut plans)?;
        let n = env.len();
        let eq_bits = if batches.eq_lhs.is_empty() {
            None
        } else {
            Some(p::eq(ctx, &batches.eq_lhs, &batches.eq_rhs, WORD_BITS)?)
        };
        let lt_bits = if batches.lt_lhs.is_empty() {
            None
        } else {
            Some(p::composite_lt(
                ctx,
                &[p::KeyOperand {
                    x: &batches.lt_lhs,
                    y: &batches.lt_rhs,
                    width: WORD_BITS,
                    descending: false,
                    signed: true,
                }],
            )?)
        };
        let pro_bits = if batches.pro_lhs.is_empty() {
            None
        } else {
            Some(p::bit_and(ctx, &batches.pro_lhs, &batches.pro_rhs)?)
        };
        let (mut eq_off, mut lt_off, mut pro_off) = (0usize, 0usize, 0usize);
        let mut ready = Vec::new();
        for plan in plans {
            ready.push(match plan {
                AtomPlan::EqShape { negate } => {
                    let b = eq_bits.as_ref().unwrap().slice(eq_off..eq_off + n);
                    eq_off += n;
                    maybe_not(ctx, b, negate)
                }
                AtomPlan::LtShape { negate } => {
                    let b = lt_bits.as_ref().unwrap().slice(lt_off..lt_off + n);
                    lt_off += n;
                    maybe_not(ctx, b, negate)
                }
                AtomPlan::ProactiveEq { negate } => {
                    let b = pro_bits.as_ref().unwrap().slice(pro_off..pro_off + n);
                    pro_off += n;
                    maybe_not(ctx, b, negate)
                }
                AtomPlan::Ready(b) => b,
            });
        }
        let mut iter = ready.into_iter();
        combine(ctx, pred, &mut iter)
    } else {
        eval_unfused(ctx, pred, env)
    }
}

fn maybe_not(ctx: &PartyCtx, b: BitVec, negate: bool) -> BitVec {
    if negate {
        p::bit_not(ctx, &b)
    } else {
        b
    }
}

/// Walks the tree in evaluation order, queueing batchable atoms and fully
/// evaluating the rest (arithmetic operands, stored bits, constants).
fn collect_atoms(
    ctx: &mut PartyCtx,
    pred: &Predicate,
    env: &ColumnEnv,
    batches: &mut AtomBatches,
    plans: &mut Vec<AtomPlan>,
) -> Result<(), EngineError> {
    match pred {
        Predicate::Cmp(op, a, b) if a.is_simple() && b.is_simple() => {
            let va = eval_expr(ctx, a, env)?;
            let vb = eval_expr(ctx, b, env)?;
            queue_cmp(batches, plans, *op, va, vb);
        }
        Predicate::Cmp(op, a, b) => {
            // arithmetic operands evaluate up front, each on its own rounds
            let va = eval_expr(ctx, a, env)?;
            let vb = eval_expr(ctx, b, env)?;
            queue_cmp(batches, plans, *op, va, vb);
        }
        Predicate::ProactiveCmp { col, op, constant } => {
            let bit = proactive_atom(ctx, env, col, *op, *constant, batches, plans)?;
            if let Some(b) = bit {
                plans.push(AtomPlan::Ready(b));
            }
        }
        Predicate::And(ps) | Predicate::Or(ps) => {
            for p in ps {
                collect_atoms(ctx, p, env, batches, plans)?;
            }
        }
        Predicate::Not(p) => collect_atoms(ctx, p, env, batches, plans)?,
        Predicate::Bit(c) => {
            plans.push(AtomPlan::Ready(env.get(c)?.clone()));
        }
        Predicate::Const(b) => {
            let v = ShareVec::constant(ctx, *b as u64, env.len(), SharingMode::Boolean);
            plans.push(AtomPlan::Ready(v));
        }
    }
    Ok(())
}

fn queue_cmp(batches: &mut AtomBatches, plans: &mut Vec<AtomPlan>, op: CmpOp, va: ShareVec, vb: ShareVec) {
    match op {
        CmpOp::Eq | CmpOp::Ne => {
            batches.eq_lhs.extend(&va);
            batches.eq_rhs.extend(&vb);
            plans.push(AtomPlan::EqShape {
                negate: op == CmpOp::Ne,
            });
        }
        CmpOp::Lt | CmpOp::Ge => {
            batches.lt_lhs.extend(&va);
            batches.lt_rhs.extend(&vb);
            plans.push(AtomPlan::LtShape {
                negate: op == CmpOp::Ge,
            });
        }
        CmpOp::Gt | CmpOp::Le => {
            batches.lt_lhs.extend(&vb);
            batches.lt_rhs.extend(&va);
            plans.push(AtomPlan::LtShape {
                negate: op == CmpOp::Le,
            });
        }
    }
}

/// Proactive constant comparison: sign checks on the owner-shared
/// differences. Inequalities are fully local; equality needs one AND of the
/// two sign complements, queued for the shared proactive round.
fn proactive_atom(
    ctx: &mut PartyCtx,
    env: &ColumnEnv,
    col: &str,
    op: CmpOp,
    c: ShareValue,
    batches: &mut AtomBatches,
    plans: &mut Vec<AtomPlan>,
) -> Result<Option<BitVec>, EngineError> {
    let minus = env.get(&proactive_col_name(col, ProactiveKind::MinusConst, c))?;
    let reversed = env.get(&proactive_col_name(col, ProactiveKind::ConstMinus, c))?;
    let s_lt_c = p::ltz(ctx, minus)?; // col - c < 0
    let c_lt_s = p::ltz(ctx, reversed)?; // c - col < 0
    Ok(match op {
        CmpOp::Lt => Some(s_lt_c),
        CmpOp::Ge => Some(p::bit_not(ctx, &s_lt_c)),
        CmpOp::Gt => Some(c_lt_s),
        CmpOp::Le => Some(p::bit_not(ctx, &c_lt_s)),
        CmpOp::Eq | CmpOp::Ne => {
            batches.pro_lhs.extend(&p::bit_not(ctx, &s_lt_c));
            batches.pro_rhs.extend(&p::bit_not(ctx, &c_lt_s));
            plans.push(AtomPlan::ProactiveEq {
                negate: op == CmpOp::Ne,
            });
            None
        }
    })
}

/// Combines atom bits along the tree. Each AND/OR node reduces its children
/// pairwise, `ceil(log2 arity)` rounds per node.
fn combine(
    ctx: &mut PartyCtx,
    pred: &Predicate,
    ready: &mut std::vec::IntoIter<BitVec>,
) -> Result<BitVec, EngineError> {
    match pred {
        Predicate::Cmp(..) | Predicate::ProactiveCmp { .. } | Predicate::Bit(_) | Predicate::Const(_) => {
            Ok(ready.next().expect("atom bit missing"))
        }
        Predicate::Not(p) => {
            let b = combine(ctx, p, ready)?;
            Ok(p::bit_not(ctx, &b))
        }
        Predicate::And(ps) => {
            let bits: Vec<BitVec> = ps
                .iter()
                .map(|p| combine(ctx, p, ready))
                .collect::<Result<_, _>>()?;
            p::bit_and_fold(ctx, &bits)
        }
        Predicate::Or(ps) => {
            let bits: Vec<BitVec> = ps
                .iter()
                .map(|p| combine(ctx, p, ready))
                .collect::<Result<_, _>>()?;
            p::bit_or_fold(ctx, &bits)
        }
    }
}

fn eval_unfused(ctx: &mut PartyCtx, pred: &Predicate, env: &ColumnEnv) -> Result<BitVec, EngineError> {
    match pred {
        Predicate::Cmp(op, a, b) => {
            let va = eval_expr(ctx, a, env)?;
            let vb = eval_expr(ctx, b, env)?;
            let bit = match op {
                CmpOp::Eq => p::eq(ctx, &va, &vb, WORD_BITS)?,
                CmpOp::Ne => {
                    let e = p::eq(ctx, &va, &vb, WORD_BITS)?;
                    p::bit_not(ctx, &e)
                }
                CmpOp::Lt => p::lt(ctx, &va, &vb)?,
                CmpOp::Ge => {
                    let l = p::lt(ctx, &va, &vb)?;
                    p::bit_not(ctx, &l)
                }
                CmpOp::Gt => p::lt(ctx, &vb, &va)?,
                CmpOp::Le => {
                    let l = p::lt(ctx, &vb, &va)?;
                    p::bit_not(ctx, &l)
                }
            };
            Ok(bit)
        }
        Predicate::ProactiveCmp { col, op, constant } => {
            let mut batches = AtomBatches {
                eq_lhs: ShareVec::new(SharingMode::Boolean),
                eq_rhs: ShareVec::new(SharingMode::Boolean),
                lt_lhs: ShareVec::new(SharingMode::Boolean),
                lt_rhs: ShareVec::new(SharingMode::Boolean),
                pro_lhs: ShareVec::new(SharingMode::Boolean),
                pro_rhs: ShareVec::new(SharingMode::Boolean),
            };
            let mut plans = Vec::new();
            let bit = proactive_atom(ctx, env, col, *op, *constant, &mut batches, &mut plans)?;
            match bit {
                Some(b) => Ok(b),
                None => {
                    let anded = p::bit_and(ctx, &batches.pro_lhs, &batches.pro_rhs)?;
                    Ok(match plans.pop() {
                        Some(AtomPlan::ProactiveEq { negate: true }) => p::bit_not(ctx, &anded),
                        _ => anded,
                    })
                }
            }
        }
        Predicate::And(ps) => {
            let bits: Vec<BitVec> = ps
                .iter()
                .map(|p| eval_unfused(ctx, p, env))
                .collect::<Result<_, _>>()?;
            p::bit_and_fold(ctx, &bits)
        }
        Predicate::Or(ps) => {
            let bits: Vec<BitVec> = ps
                .iter()
                .map(|p| eval_unfused(ctx, p, env))
                .collect::<Result<_, _>>()?;
            p::bit_or_fold(ctx, &bits)
        }
        Predicate::Not(p) => {
            let b = eval_unfused(ctx, p, env)?;
            Ok(p::bit_not(ctx, &b))
        }
        Predicate::Bit(c) => Ok(env.get(c)?.clone()),
        Predicate::Const(b) => Ok(ShareVec::constant(
            ctx,
            *b as u64,
            env.len(),
            SharingMode::Boolean,
        )),
    }
}

fn eval_expr(ctx: &mut PartyCtx, expr: &Expr, env: &ColumnEnv) -> Result<ShareVec, EngineError> {
    match expr {
        Expr::Col(c) => Ok(env.get(c)?.clone()),
        Expr::Const(v) => Ok(ShareVec::constant(ctx, *v, env.len(), SharingMode::Boolean)),
        Expr::Add(a, b) => {
            let va = eval_expr(ctx, a, env)?;
            let vb = eval_expr(ctx, b, env)?;
            p::rca_add(ctx, &va, &vb)
        }
        Expr::Sub(a, b) => {
            let va = eval_expr(ctx, a, env)?;
            let vb = eval_expr(ctx, b, env)?;
            p::rca_sub(ctx, &va, &vb)
        }
        Expr::Mul(a, b) => {
            let va = eval_expr(ctx, a, env)?;
            let vb = eval_expr(ctx, b, env)?;
            let aa = p::b2a(ctx, &va)?;
            let ab = p::b2a(ctx, &vb)?;
            let prod = p::arith_mul(ctx, &aa, &ab)?;
            p::a2b(ctx, &prod)
        }
    }
}

/// Plaintext evaluation of the same tree, for the oracle. Lives here so the
/// syntax stays in one place; the arithmetic is plain wrapping/signed math
/// with no shares involved.
pub fn eval_plain(pred: &Predicate, get: &dyn Fn(&str) -> Option<u64>) -> Option<bool> {
    Some(match pred {
        Predicate::Cmp(op, a, b) => {
            let va = eval_expr_plain(a, get)?;
            let vb = eval_expr_plain(b, get)?;
            cmp_plain(*op, va, vb)
        }
        Predicate::ProactiveCmp { col, op, constant } => {
            let v = get(col)?;
            cmp_plain(*op, v, *constant)
        }
        Predicate::And(ps) => {
            let mut acc = true;
            for p in ps {
                acc &= eval_plain(p, get)?;
            }
            acc
        }
        Predicate::Or(ps) => {
            let mut acc = false;
            for p in ps {
                acc |= eval_plain(p, get)?;
            }
            acc
        }
        Predicate::Not(p) => !eval_plain(p, get)?,
        Predicate::Bit(c) => get(c)? & 1 == 1,
        Predicate::Const(b) => *b,
    })
}

fn cmp_plain(op: CmpOp, a: u64, b: u64) -> bool {
    let (sa, sb) = (a as i64, b as i64);
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => sa < sb,
        CmpOp::Le => sa <= sb,
        CmpOp::Gt => sa > sb,
        CmpOp::Ge => sa >= sb,
    }
}

fn eval_expr_plain(expr: &Expr, get: &dyn Fn(&str) -> Option<u64>) -> Option<u64> {
    Some(match expr {
        Expr::Col(c) => get(c)?,
        Expr::Const(v) => *v,
        Expr::Add(a, b) => eval_expr_plain(a, get)?.wrapping_add(eval_expr_plain(b, get)?),
        Expr::Sub(a, b) => eval_expr_plain(a, get)?.wrapping_sub(eval_expr_plain(b, get)?),
        Expr::Mul(a, b) => eval_expr_plain(a, get)?.wrapping_mul(eval_expr_plain(b, get)?),
    })
}

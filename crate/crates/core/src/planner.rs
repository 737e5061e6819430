//! Cost-based plan optimization.
//!
//! Rewrite rules are enumerated rather than greedily applied: starting from
//! the lowered plan, the optimizer closes the candidate set under all
//! guard-passing single rewrites (memoized on the structural hash), costs
//! every candidate bottom-up, and returns the argmin of
//! `alpha*ops + beta*rounds`. Ties break toward fewer rounds, then fewer
//! nodes, then stable structural order, so optimization is deterministic.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::cost::{cost_plan, CostParams, CostVector, NodeCost};
use crate::error::EngineError;
use crate::operators::{AggFunc, AggSpec};
use crate::plan::{Catalog, Plan, PlanSortKey, QueryPlan};
use crate::predicate::{CmpOp, Expr, Predicate};
use crate::share::ProactiveKind;

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Blocking-operator push-down, join push-up, join-aggregation
    /// decomposition.
    pub logical: bool,
    /// Predicate fusion and distinct fusion.
    pub fusion: bool,
    /// Dual sharing for COUNT/SUM/AVG accumulators.
    pub dual_sharing: bool,
    /// Proactive difference shares for constant comparisons.
    pub proactive: bool,
    /// Plans larger than this are not rewritten further.
    pub max_nodes: usize,
    /// Cap on enumerated alternatives.
    pub max_candidates: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            logical: true,
            fusion: true,
            dual_sharing: true,
            proactive: true,
            max_nodes: 32,
            max_candidates: 2000,
        }
    }
}

impl OptimizerConfig {
    pub fn disabled() -> Self {
        OptimizerConfig {
            logical: false,
            fusion: false,
            dual_sharing: false,
            proactive: false,
            ..OptimizerConfig::default()
        }
    }
}

/// Clears every physical-optimization flag: predicates evaluate atom by
/// atom and distinct falls back to the sequential composition. This is the
/// measured baseline the fusion rewrites are compared against.
pub fn strip_physical_opts(plan: &Plan) -> Plan {
    let mut p = plan.clone();
    match &mut p {
        Plan::Select { fused, .. }
        | Plan::AdjacentSelect { fused, .. }
        | Plan::Join { fused, .. }
        | Plan::SemiJoin { fused, .. }
        | Plan::Distinct { fused, .. } => *fused = false,
        _ => {}
    }
    let children: Vec<Plan> = p.children().iter().map(|c| strip_physical_opts(c)).collect();
    for (i, c) in children.into_iter().enumerate() {
        p = replace_child(&p, i, c);
    }
    p
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeReport {
    pub candidates: usize,
    pub applied_rules: Vec<String>,
    pub cost: CostVector,
    pub total: f64,
    pub baseline_cost: CostVector,
    pub baseline_total: f64,
    pub nodes: Vec<NodeCost>,
}

struct Candidate {
    plan: QueryPlan,
    rules: Vec<String>,
}

/// Enumerates rule applications, costs every alternative, and returns the
/// cheapest plan with its explain report.
pub fn optimize(
    plan: &QueryPlan,
    catalog: &Catalog,
    params: &CostParams,
    config: &OptimizerConfig,
) -> Result<(QueryPlan, OptimizeReport), EngineError> {
    let (baseline_cost, _) = cost_plan(&plan.root, catalog, params)?;
    let baseline_total = params.total(baseline_cost);

    let mut seen = BTreeSet::new();
    seen.insert(plan.fingerprint());
    let mut queue = VecDeque::new();
    queue.push_back(Candidate {
        plan: plan.clone(),
        rules: Vec::new(),
    });
    let mut candidates = Vec::new();
    while let Some(c) = queue.pop_front() {
        if candidates.len() >= config.max_candidates {
            break;
        }
        if c.plan.root.node_count() <= config.max_nodes {
            for (rule, alt) in rewrites(&c.plan, catalog, config) {
                if seen.insert(alt.fingerprint()) {
                    let mut rules = c.rules.clone();
                    rules.push(rule);
                    queue.push_back(Candidate { plan: alt, rules });
                }
            }
        }
        candidates.push(c);
    }

    let mut best: Option<(f64, CostVector, usize, String, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let (cost, _) = cost_plan(&c.plan.root, catalog, params)?;
        let total = params.total(cost);
        let key = (
            total,
            cost.rounds,
            c.plan.root.node_count(),
            c.plan.fingerprint(),
        );
        let better = match &best {
            None => true,
            Some((bt, bc, bn, bf, _)) => {
                (key.0, key.1, key.2, key.3.clone()) < (*bt, bc.rounds, *bn, bf.clone())
            }
        };
        if better {
            best = Some((total, cost, key.2, key.3, i));
        }
    }
    let (total, cost, _, _, idx) = best.expect("at least the input plan");
    let chosen = &candidates[idx];
    let (_, nodes) = cost_plan(&chosen.plan.root, catalog, params)?;
    Ok((
        chosen.plan.clone(),
        OptimizeReport {
            candidates: candidates.len(),
            applied_rules: chosen.rules.clone(),
            cost,
            total,
            baseline_cost,
            baseline_total,
            nodes,
        },
    ))
}

/// All single-rewrite alternatives of the plan, with the rule that
/// produced each.
fn rewrites(
    plan: &QueryPlan,
    catalog: &Catalog,
    config: &OptimizerConfig,
) -> Vec<(String, QueryPlan)> {
    let mut out = Vec::new();
    for (rule, root, extra) in node_rewrites(&plan.root, catalog, config) {
        let mut annotations = plan.annotations.clone();
        for need in extra {
            if !annotations.proactive.contains(&need) {
                annotations.proactive.push(need);
            }
        }
        out.push((rule, QueryPlan { root, annotations }));
    }
    out
}

type Proactive = (String, ProactiveKind, u64);

fn node_rewrites(
    plan: &Plan,
    catalog: &Catalog,
    config: &OptimizerConfig,
) -> Vec<(String, Plan, Vec<Proactive>)> {
    let mut out: Vec<(String, Plan, Vec<Proactive>)> = Vec::new();
    if config.logical {
        out.extend(rule_blocking_pushdown(plan).map(|p| ("blocking-push-down".to_string(), p, vec![])));
        out.extend(rule_join_pushup(plan, catalog).map(|p| ("join-push-up".to_string(), p, vec![])));
        out.extend(
            rule_join_agg_decomposition(plan, catalog)
                .map(|p| ("join-aggregation-decomposition".to_string(), p, vec![])),
        );
    }
    if config.fusion {
        out.extend(rule_predicate_fusion(plan).map(|p| ("predicate-fusion".to_string(), p, vec![])));
        out.extend(rule_distinct_fusion(plan).map(|p| ("distinct-fusion".to_string(), p, vec![])));
    }
    if config.dual_sharing {
        out.extend(rule_dual_sharing(plan).map(|p| ("dual-sharing".to_string(), p, vec![])));
    }
    if config.proactive {
        if let Some((p, needs)) = rule_proactive_sharing(plan, catalog) {
            out.push(("proactive-sharing".to_string(), p, needs));
        }
    }
    // recurse: one rewrite anywhere in the subtree
    out.extend(child_rewrites(plan, catalog, config));
    out
}

fn child_rewrites(
    plan: &Plan,
    catalog: &Catalog,
    config: &OptimizerConfig,
) -> Vec<(String, Plan, Vec<Proactive>)> {
    let mut out = Vec::new();
    let children = plan.children();
    for (i, child) in children.iter().enumerate() {
        for (rule, new_child, needs) in node_rewrites(child, catalog, config) {
            out.push((rule, replace_child(plan, i, new_child), needs));
        }
    }
    out
}

fn replace_child(plan: &Plan, index: usize, new_child: Plan) -> Plan {
    let mut p = plan.clone();
    match &mut p {
        Plan::Scan { .. } => unreachable!("scan has no children"),
        Plan::Select { input, .. }
        | Plan::AdjacentSelect { input, .. }
        | Plan::Project { input, .. }
        | Plan::OrderBy { input, .. }
        | Plan::GroupBy { input, .. }
        | Plan::GroupBySecondPhase { input, .. }
        | Plan::GroupBySequential { input, .. }
        | Plan::Distinct { input, .. }
        | Plan::DistinctSecondPhase { input, .. }
        | Plan::Shuffle { input }
        | Plan::Mask { input }
        | Plan::GlobalAgg { input, .. }
        | Plan::Open { input } => *input = Box::new(new_child),
        Plan::Join { left, right, .. } | Plan::SemiJoin { left, right, .. } => {
            if index == 0 {
                *left = Box::new(new_child);
            } else {
                *right = Box::new(new_child);
            }
        }
    }
    p
}

// ---------------------------------------------------------------------------
// Logical rules
// ---------------------------------------------------------------------------

/// `sort(select(R)) -> select(sort(R))`: blocking operators move as close
/// to the base input as possible. Valid whenever the sort carries no limit,
/// since the selection only appends a bit column.
fn rule_blocking_pushdown(plan: &Plan) -> Option<Plan> {
    if let Plan::OrderBy {
        input,
        keys,
        limit: None,
        gates_first,
    } = plan
    {
        // a sort keyed on the selection's own bit cannot move below it
        if keys.iter().any(|k| k.col.starts_with("a_")) {
            return None;
        }
        if let Plan::Select {
            input: inner,
            predicate,
            fused,
        } = input.as_ref()
        {
            return Some(Plan::Select {
                input: Box::new(Plan::OrderBy {
                    input: inner.clone(),
                    keys: keys.clone(),
                    limit: None,
                    gates_first: *gates_first,
                }),
                predicate: predicate.clone(),
                fused: *fused,
            });
        }
    }
    None
}

/// Splits an equi-join condition into (left column, right column) pairs.
fn equi_join_pairs(pred: &Predicate) -> Option<Vec<(String, String)>> {
    let atoms: Vec<&Predicate> = match pred {
        Predicate::And(ps) => ps.iter().collect(),
        single => vec![single],
    };
    let mut pairs = Vec::new();
    for a in atoms {
        match a {
            Predicate::Cmp(CmpOp::Eq, Expr::Col(l), Expr::Col(r)) => {
                pairs.push((l.clone(), r.clone()));
            }
            _ => return None,
        }
    }
    Some(pairs)
}

/// `distinct_a(R join_{a=a} S) -> distinct_a(R) join distinct_a(S)`:
/// the join runs last so no blocking operator ever sees its output.
/// Requires the distinct keys to coincide with one side of the equi-join
/// condition.
fn rule_join_pushup(plan: &Plan, catalog: &Catalog) -> Option<Plan> {
    let Plan::Distinct {
        input,
        keys,
        fused,
    } = plan
    else {
        return None;
    };
    let Plan::Join {
        left,
        right,
        predicate,
        fused: jfused,
    } = input.as_ref()
    else {
        return None;
    };
    let pairs = equi_join_pairs(predicate)?;
    let lcols: BTreeSet<String> = pairs.iter().map(|(l, _)| l.clone()).collect();
    let rcols: BTreeSet<String> = pairs.iter().map(|(_, r)| r.clone()).collect();
    let key_set: BTreeSet<String> = keys.iter().cloned().collect();
    let left_shape = left.shape(catalog).ok()?;
    let lschema: BTreeSet<String> = left_shape.data_cols.iter().cloned().collect();
    // the distinct key must be exactly the join key of the side that owns
    // it; either orientation dedups both inputs on their own join columns
    let owns_left = key_set == lcols && lcols.iter().all(|c| lschema.contains(c));
    let owns_right = key_set == rcols && rcols.iter().all(|c| !lschema.contains(c));
    if !owns_left && !owns_right {
        return None;
    }
    let (dl, dr) = (lcols, rcols);
    Some(Plan::Join {
        left: Box::new(Plan::Distinct {
            input: left.clone(),
            keys: dl.into_iter().collect(),
            fused: *fused,
        }),
        right: Box::new(Plan::Distinct {
            input: right.clone(),
            keys: dr.into_iter().collect(),
            fused: *fused,
        }),
        predicate: predicate.clone(),
        fused: *jfused,
    })
}

/// Replaces join-then-aggregate with a semi-join carrying partial
/// aggregates plus a second aggregation phase over the sorted semi-join
/// output, so the cartesian product is never materialized. Applies when
/// the group (or distinct) keys belong to one join input.
fn rule_join_agg_decomposition(plan: &Plan, catalog: &Catalog) -> Option<Plan> {
    match plan {
        Plan::GroupBy {
            input,
            keys,
            agg,
            suppress_shuffle,
        } => {
            let Plan::Join {
                left,
                right,
                predicate,
                fused,
            } = input.as_ref()
            else {
                return None;
            };
            let (own, other) = oriented(left, right, keys, catalog)?;
            let (own, other) = (own.clone(), other.clone());
            // partial aggregation needs the target on the semi-join's inner side
            if let Some(t) = &agg.target {
                let inner = other.shape(catalog).ok()?;
                if !inner.data_cols.contains(t) {
                    return None;
                }
            }
            let phase2 = Plan::GroupBySecondPhase {
                input: Box::new(Plan::OrderBy {
                    input: Box::new(Plan::SemiJoin {
                        left: Box::new(own),
                        right: Box::new(other),
                        predicate: predicate.clone(),
                        partial: Some(agg.clone()),
                        fused: *fused,
                    }),
                    keys: keys
                        .iter()
                        .map(|k| PlanSortKey {
                            col: k.clone(),
                            desc: false,
                        })
                        .collect(),
                    limit: None,
                    gates_first: true,
                }),
                keys: keys.clone(),
                agg: agg.clone(),
            };
            Some(if *suppress_shuffle {
                phase2
            } else {
                Plan::Shuffle {
                    input: Box::new(phase2),
                }
            })
        }
        Plan::Distinct { input, keys, .. } => {
            let Plan::Join {
                left,
                right,
                predicate,
                fused,
            } = input.as_ref()
            else {
                return None;
            };
            let (own, other) = oriented(left, right, keys, catalog)?;
            let (own, other) = (own.clone(), other.clone());
            Some(Plan::DistinctSecondPhase {
                input: Box::new(Plan::OrderBy {
                    input: Box::new(Plan::SemiJoin {
                        left: Box::new(own),
                        right: Box::new(other),
                        predicate: predicate.clone(),
                        partial: None,
                        fused: *fused,
                    }),
                    keys: keys
                        .iter()
                        .map(|k| PlanSortKey {
                            col: k.clone(),
                            desc: false,
                        })
                        .collect(),
                    limit: None,
                    gates_first: true,
                }),
                keys: keys.clone(),
            })
        }
        _ => None,
    }
}

/// Orients a join so its left input owns the given keys.
fn oriented<'a>(
    left: &'a Plan,
    right: &'a Plan,
    keys: &[String],
    catalog: &Catalog,
) -> Option<(&'a Plan, &'a Plan)> {
    let l = left.shape(catalog).ok()?;
    let r = right.shape(catalog).ok()?;
    if keys.iter().all(|k| l.data_cols.contains(k)) {
        Some((left, right))
    } else if keys.iter().all(|k| r.data_cols.contains(k)) {
        Some((right, left))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Physical rules
// ---------------------------------------------------------------------------

/// Merges adjacent filters so independent atoms evaluate in shared rounds:
/// a selection folds into the neighbouring select, join, or semi-join.
fn rule_predicate_fusion(plan: &Plan) -> Option<Plan> {
    let Plan::Select {
        input,
        predicate,
        ..
    } = plan
    else {
        return None;
    };
    match input.as_ref() {
        Plan::Select {
            input: inner,
            predicate: inner_pred,
            ..
        } => Some(Plan::Select {
            input: inner.clone(),
            predicate: Predicate::and(vec![inner_pred.clone(), predicate.clone()]),
            fused: true,
        }),
        Plan::Join {
            left,
            right,
            predicate: theta,
            ..
        } => Some(Plan::Join {
            left: left.clone(),
            right: right.clone(),
            predicate: Predicate::and(vec![theta.clone(), predicate.clone()]),
            fused: true,
        }),
        Plan::SemiJoin {
            left,
            right,
            predicate: theta,
            partial,
            ..
        } => Some(Plan::SemiJoin {
            left: left.clone(),
            right: right.clone(),
            predicate: Predicate::and(vec![theta.clone(), predicate.clone()]),
            partial: partial.clone(),
            fused: true,
        }),
        _ => None,
    }
}

/// Absorbs upstream filter bits into the distinct sort so the second phase
/// stays one bulk equality pass instead of a sequential scan.
fn rule_distinct_fusion(plan: &Plan) -> Option<Plan> {
    if let Plan::Distinct {
        input,
        keys,
        fused: false,
    } = plan
    {
        return Some(Plan::Distinct {
            input: input.clone(),
            keys: keys.clone(),
            fused: true,
        });
    }
    None
}

// ---------------------------------------------------------------------------
// Secret-sharing rules
// ---------------------------------------------------------------------------

fn dual_applicable(agg: &AggSpec) -> bool {
    !agg.dual && matches!(agg.func, AggFunc::Count | AggFunc::Sum | AggFunc::Avg)
}

/// Keeps arithmetic accumulators and converts the per-step condition bit
/// once, replacing the ripple-carry adder in aggregation steps.
/// Comparison-based aggregations (MIN/MAX) stay boolean.
fn rule_dual_sharing(plan: &Plan) -> Option<Plan> {
    let mut p = plan.clone();
    match &mut p {
        // the second phase and the semi-join feeding it must agree on the
        // accumulator's sharing mode, so they flip together
        Plan::GroupBySecondPhase { agg, input, .. } => {
            if !dual_applicable(agg) {
                return None;
            }
            agg.dual = true;
            set_partial_dual(input);
        }
        Plan::GroupBy { agg, .. }
        | Plan::GroupBySequential { agg, .. }
        | Plan::GlobalAgg { agg, .. } => {
            if !dual_applicable(agg) {
                return None;
            }
            agg.dual = true;
        }
        _ => return None,
    }
    Some(p)
}

fn set_partial_dual(plan: &mut Plan) {
    match plan {
        Plan::SemiJoin {
            partial: Some(agg), ..
        } => {
            if dual_applicable(agg) {
                agg.dual = true;
            }
        }
        Plan::OrderBy { input, .. } | Plan::Shuffle { input } | Plan::Project { input, .. } => {
            set_partial_dual(input)
        }
        _ => {}
    }
}

/// Rewrites constant comparisons to local sign checks on owner-provided
/// difference shares, and constant-offset column comparisons to plain
/// two-column inequalities on an owner-provided shifted column.
fn rule_proactive_sharing(plan: &Plan, catalog: &Catalog) -> Option<(Plan, Vec<Proactive>)> {
    let mut p = plan.clone();
    let pred = match &mut p {
        Plan::Select { predicate, .. }
        | Plan::AdjacentSelect { predicate, .. }
        | Plan::Join { predicate, .. }
        | Plan::SemiJoin { predicate, .. } => predicate,
        _ => return None,
    };
    let mut needs = Vec::new();
    let rewritten = rewrite_proactive(pred, catalog, &mut needs);
    if needs.is_empty() {
        return None;
    }
    *pred = rewritten;
    Some((p, needs))
}

fn base_column(name: &str, catalog: &Catalog) -> bool {
    catalog
        .tables
        .values()
        .any(|t| t.columns.iter().any(|c| c == name))
}

fn rewrite_proactive(p: &Predicate, catalog: &Catalog, needs: &mut Vec<Proactive>) -> Predicate {
    match p {
        Predicate::Cmp(op, Expr::Col(a), Expr::Const(c)) if base_column(a, catalog) => {
            needs.push((a.clone(), ProactiveKind::MinusConst, *c));
            needs.push((a.clone(), ProactiveKind::ConstMinus, *c));
            Predicate::ProactiveCmp {
                col: a.clone(),
                op: *op,
                constant: *c,
            }
        }
        Predicate::Cmp(op, Expr::Const(c), Expr::Col(a)) if base_column(a, catalog) => {
            let flipped = match op {
                CmpOp::Lt => CmpOp::Gt,
                CmpOp::Le => CmpOp::Ge,
                CmpOp::Gt => CmpOp::Lt,
                CmpOp::Ge => CmpOp::Le,
                other => *other,
            };
            needs.push((a.clone(), ProactiveKind::MinusConst, *c));
            needs.push((a.clone(), ProactiveKind::ConstMinus, *c));
            Predicate::ProactiveCmp {
                col: a.clone(),
                op: flipped,
                constant: *c,
            }
        }
        // x - y OP c  ->  x OP (y + c), with y + c shared by the owner
        Predicate::Cmp(op, Expr::Sub(x, y), Expr::Const(c)) => {
            if let (Expr::Col(xc), Expr::Col(yc)) = (x.as_ref(), y.as_ref()) {
                if base_column(yc, catalog) {
                    needs.push((yc.clone(), ProactiveKind::PlusConst, *c));
                    let shifted = crate::predicate::proactive_col_name(yc, ProactiveKind::PlusConst, *c);
                    return Predicate::Cmp(*op, Expr::col(xc), Expr::Col(shifted));
                }
            }
            p.clone()
        }
        Predicate::And(ps) => {
            Predicate::And(ps.iter().map(|q| rewrite_proactive(q, catalog, needs)).collect())
        }
        Predicate::Or(ps) => {
            Predicate::Or(ps.iter().map(|q| rewrite_proactive(q, catalog, needs)).collect())
        }
        Predicate::Not(q) => Predicate::Not(Box::new(rewrite_proactive(q, catalog, needs))),
        other => other.clone(),
    }
}

//! Operator-tree IR shared by the planner, cost model, and executor.
//!
//! Cardinality and schema are derivable bottom-up from a catalog of base
//! tables; both are public. Plans serialize to a JSON tree for `--json`
//! explain output, and the serialized form doubles as the structural hash
//! used by the optimizer's memo.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::EngineError;
use crate::operators::AggSpec;
use crate::predicate::Predicate;
use crate::share::ProactiveKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSortKey {
    pub col: String,
    pub desc: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum Plan {
    Scan {
        table: String,
    },
    Select {
        input: Box<Plan>,
        predicate: Predicate,
        fused: bool,
    },
    /// Selection over adjacent row pairs; `next.` prefixes refer to the
    /// successor row.
    AdjacentSelect {
        input: Box<Plan>,
        predicate: Predicate,
        fused: bool,
    },
    Project {
        input: Box<Plan>,
        cols: Vec<String>,
    },
    Join {
        left: Box<Plan>,
        right: Box<Plan>,
        predicate: Predicate,
        fused: bool,
    },
    SemiJoin {
        left: Box<Plan>,
        right: Box<Plan>,
        predicate: Predicate,
        partial: Option<AggSpec>,
        fused: bool,
    },
    /// Explicit sort. With `gates_first`, pending flag bits lead the key
    /// list (descending) so filtered rows sink; the valid bit always does.
    OrderBy {
        input: Box<Plan>,
        keys: Vec<PlanSortKey>,
        limit: Option<usize>,
        gates_first: bool,
    },
    /// Sort on (flags, keys) + odd-even aggregation + final shuffle unless
    /// suppressed.
    GroupBy {
        input: Box<Plan>,
        keys: Vec<String>,
        agg: AggSpec,
        suppress_shuffle: bool,
    },
    /// Odd-even aggregation only; expects input sorted on (flags, keys).
    GroupBySecondPhase {
        input: Box<Plan>,
        keys: Vec<String>,
        agg: AggSpec,
    },
    /// Adjacent-pair aggregation with linear rounds; expects sorted input.
    GroupBySequential {
        input: Box<Plan>,
        keys: Vec<String>,
        agg: AggSpec,
    },
    /// Fused: sort on (flags, keys) + one batched adjacent-equality pass.
    /// Unfused: sort on keys only + the sequential composition pass.
    Distinct {
        input: Box<Plan>,
        keys: Vec<String>,
        fused: bool,
    },
    /// Adjacent-equality pass only; expects input sorted on (flags, keys).
    DistinctSecondPhase {
        input: Box<Plan>,
        keys: Vec<String>,
    },
    Shuffle {
        input: Box<Plan>,
    },
    Mask {
        input: Box<Plan>,
    },
    GlobalAgg {
        input: Box<Plan>,
        agg: AggSpec,
    },
    Open {
        input: Box<Plan>,
    },
}

/// Additional physical annotations carried beside the operator tree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAnnotations {
    /// Difference shares the data owners must provide: (column, kind, c).
    pub proactive: Vec<(String, ProactiveKind, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub root: Plan,
    pub annotations: PlanAnnotations,
}

impl QueryPlan {
    pub fn new(root: Plan) -> Self {
        QueryPlan {
            root,
            annotations: PlanAnnotations::default(),
        }
    }

    /// Canonical serialized form; doubles as the structural hash.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Public description of one base relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseTable {
    /// Live row count before padding.
    pub rows: usize,
    pub columns: Vec<String>,
}

/// Catalog of base relations, the public information plans are costed and
/// type-checked against.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub tables: BTreeMap<String, BaseTable>,
}

impl Catalog {
    pub fn add(&mut self, name: &str, rows: usize, columns: &[&str]) {
        self.tables.insert(
            name.to_string(),
            BaseTable {
                rows,
                columns: columns.iter().map(|s| s.to_string()).collect(),
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&BaseTable, EngineError> {
        self.tables
            .get(name)
            .ok_or_else(|| EngineError::UnknownColumn(format!("table {name}")))
    }
}

/// Public shape of a plan node's output, tracked bottom-up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub data_cols: Vec<String>,
    pub agg_cols: usize,
    /// Pending single-bit flag columns (selection/join bits).
    pub flags: usize,
    pub has_valid: bool,
    /// Aggregate columns currently held in arithmetic sharing.
    pub arith_cols: Vec<String>,
}

impl Shape {
    pub fn total_cols(&self) -> usize {
        self.data_cols.len() + self.agg_cols + self.flags + self.has_valid as usize
    }

    pub fn gate_bits(&self) -> usize {
        self.flags + self.has_valid as usize
    }

    pub fn has_arith(&self) -> bool {
        !self.arith_cols.is_empty()
    }
}

impl Plan {
    pub fn children(&self) -> Vec<&Plan> {
        match self {
            Plan::Scan { .. } => vec![],
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
            | Plan::Open { input } => vec![input],
            Plan::Join { left, right, .. } | Plan::SemiJoin { left, right, .. } => {
                vec![left, right]
            }
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Plan::Scan { .. } => "scan",
            Plan::Select { .. } => "select",
            Plan::AdjacentSelect { .. } => "adjacent-select",
            Plan::Project { .. } => "project",
            Plan::Join { .. } => "join",
            Plan::SemiJoin { .. } => "semi-join",
            Plan::OrderBy { .. } => "order-by",
            Plan::GroupBy { .. } => "group-by",
            Plan::GroupBySecondPhase { .. } => "group-by-2nd-phase",
            Plan::GroupBySequential { .. } => "group-by-sequential",
            Plan::Distinct { .. } => "distinct",
            Plan::DistinctSecondPhase { .. } => "distinct-2nd-phase",
            Plan::Shuffle { .. } => "shuffle",
            Plan::Mask { .. } => "mask",
            Plan::GlobalAgg { .. } => "global-agg",
            Plan::Open { .. } => "open",
        }
    }

    /// Output shape of this node given the catalog. Sort-family nodes pad
    /// to the next power of two and report the padded cardinality.
    pub fn shape(&self, catalog: &Catalog) -> Result<Shape, EngineError> {
        match self {
            Plan::Scan { table } => {
                let base = catalog.get(table)?;
                let padded = base.rows.max(1).next_power_of_two();
                Ok(Shape {
                    rows: padded,
                    data_cols: base.columns.clone(),
                    agg_cols: 0,
                    flags: 0,
                    has_valid: padded != base.rows,
                    arith_cols: vec![],
                })
            }
            Plan::Select { input, predicate, .. } => {
                let mut s = input.shape(catalog)?;
                s.flags = 1; // conjoined into at most one pending flag
                // predicate operands held arithmetically convert first
                let refs = predicate.columns();
                s.arith_cols.retain(|c| !refs.contains(c));
                Ok(s)
            }
            Plan::AdjacentSelect { input, predicate, .. } => {
                let mut s = input.shape(catalog)?;
                s.flags = 1;
                let refs = predicate.columns();
                s.arith_cols.retain(|c| !refs.contains(c));
                Ok(s)
            }
            Plan::Project { input, cols } => {
                let mut s = input.shape(catalog)?;
                let agg_names = ["a_g", "a_g_cnt", "a_g2"];
                for c in cols {
                    if !s.data_cols.contains(c) && !agg_names.contains(&c.as_str()) {
                        return Err(EngineError::UnknownColumn(c.clone()));
                    }
                }
                s.data_cols = cols
                    .iter()
                    .filter(|c| s.data_cols.contains(c))
                    .cloned()
                    .collect();
                Ok(s)
            }
            Plan::Join { left, right, .. } => {
                let l = left.shape(catalog)?;
                let r = right.shape(catalog)?;
                let mut cols = l.data_cols.clone();
                cols.extend(r.data_cols.clone());
                Ok(Shape {
                    rows: l.rows * r.rows,
                    data_cols: cols,
                    agg_cols: 0,
                    flags: 1,
                    has_valid: false,
                    arith_cols: vec![],
                })
            }
            Plan::SemiJoin { left, partial, .. } => {
                let mut s = left.shape(catalog)?;
                s.flags += 1;
                if let Some(spec) = partial {
                    s.agg_cols += crate::cost::acc_cols(spec.func) as usize;
                    if spec.dual {
                        s.arith_cols.push("a_g".to_string());
                        if spec.func == crate::operators::AggFunc::Avg {
                            s.arith_cols.push("a_g_cnt".to_string());
                        }
                    }
                }
                Ok(s)
            }
            Plan::OrderBy { input, keys, limit, .. } => {
                let mut s = input.shape(catalog)?;
                let padded = s.rows.max(1).next_power_of_two();
                if padded != s.rows {
                    s.rows = padded;
                    s.has_valid = true;
                }
                // arithmetic key columns convert to boolean before sorting
                s.arith_cols.retain(|c| !keys.iter().any(|k| &k.col == c));
                if let Some(k) = limit {
                    s.rows = s.rows.min(*k);
                }
                Ok(s)
            }
            Plan::GroupBy { input, agg, .. }
            | Plan::GroupBySecondPhase { input, agg, .. }
            | Plan::GroupBySequential { input, agg, .. } => {
                let mut s = input.shape(catalog)?;
                let padded = s.rows.max(1).next_power_of_two();
                if padded != s.rows {
                    s.rows = padded;
                }
                s.has_valid = true;
                // a pre-existing partial aggregate is consumed in place
                if s.agg_cols == 0 {
                    s.agg_cols = crate::cost::acc_cols(agg.func) as usize;
                }
                if agg.dual
                    && matches!(
                        agg.func,
                        crate::operators::AggFunc::Count
                            | crate::operators::AggFunc::Sum
                            | crate::operators::AggFunc::Avg
                    )
                    && !s.arith_cols.iter().any(|c| c == "a_g")
                {
                    s.arith_cols.push("a_g".to_string());
                    if agg.func == crate::operators::AggFunc::Avg {
                        s.arith_cols.push("a_g_cnt".to_string());
                    }
                }
                Ok(s)
            }
            Plan::Distinct { input, .. } | Plan::DistinctSecondPhase { input, .. } => {
                let mut s = input.shape(catalog)?;
                let padded = s.rows.max(1).next_power_of_two();
                s.rows = padded;
                s.has_valid = true;
                Ok(s)
            }
            Plan::Shuffle { input } => {
                let mut s = input.shape(catalog)?;
                s.rows = s.rows.max(1).next_power_of_two();
                Ok(s)
            }
            Plan::Mask { input } => {
                let mut s = input.shape(catalog)?;
                s.flags = 0;
                s.has_valid = true;
                Ok(s)
            }
            Plan::GlobalAgg { input, agg } => {
                input.shape(catalog)?; // validate the subtree
                Ok(Shape {
                    rows: 1,
                    data_cols: vec![],
                    agg_cols: crate::cost::acc_cols(agg.func) as usize,
                    flags: 0,
                    has_valid: false,
                    arith_cols: if agg.dual {
                        vec!["a_g".to_string()]
                    } else {
                        vec![]
                    },
                })
            }
            Plan::Open { input } => input.shape(catalog),
        }
    }
}

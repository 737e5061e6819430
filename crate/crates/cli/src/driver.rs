//! End-to-end query driving: parse, lower, optimize, execute at three
//! parties, open, and present. Shared by the CLI commands, the benchmark
//! runner, and the acceptance tests.

use std::collections::BTreeMap;

use anyhow::{anyhow, Result};

use obliq_core::cost::{cost_plan, CostParams, CostVector};
use obliq_core::exec::{run_plan, RunOutcome};
use obliq_core::oracle::{oracle_eval, PlainTable};
use obliq_core::plan::QueryPlan;
use obliq_core::planner::{optimize, OptimizeReport, OptimizerConfig};
use obliq_core::runtime::TransportKind;

use crate::lower::{lower, Lowered, SchemaInfo};
use crate::queries::PlainDb;
use crate::sql::parse;

pub struct QueryRun {
    pub outcome: RunOutcome,
    pub plan: QueryPlan,
    pub report: Option<OptimizeReport>,
    pub cost: CostVector,
    pub output_names: Vec<String>,
    /// Rows the largest intermediate relation materializes, a memory proxy.
    pub peak_rows: usize,
}

pub struct Driver {
    pub params: CostParams,
    pub optimize: bool,
    pub config: OptimizerConfig,
    pub transport: TransportKind,
    pub seed: u64,
}

impl Default for Driver {
    fn default() -> Self {
        Driver {
            params: CostParams::default(),
            optimize: true,
            config: OptimizerConfig::default(),
            transport: TransportKind::InProcess,
            seed: 0x0b11_9e55,
        }
    }
}

impl Driver {
    pub fn lower_sql(&self, sql: &str, db: &PlainDb, strict: bool) -> Result<Lowered> {
        let spec = parse(sql)?;
        let schemas = SchemaInfo {
            columns: db.iter().map(|(k, (c, _))| (k.clone(), c.clone())).collect(),
            rows: db.iter().map(|(k, (_, r))| (k.clone(), r.len())).collect(),
        };
        Ok(lower(&spec, &schemas, strict)?)
    }

    /// The plan that will execute: lowered, then optimized unless disabled.
    pub fn plan_sql(
        &self,
        sql: &str,
        db: &PlainDb,
        strict: bool,
    ) -> Result<(Lowered, QueryPlan, Option<OptimizeReport>)> {
        let lowered = self.lower_sql(sql, db, strict)?;
        if self.optimize {
            let (best, report) = optimize(
                &lowered.plan,
                &lowered.catalog,
                &self.params,
                &self.config,
            )?;
            Ok((lowered, best, Some(report)))
        } else {
            let mut plan = lowered.plan.clone();
            plan.root = obliq_core::planner::strip_physical_opts(&plan.root);
            Ok((lowered, plan, None))
        }
    }

    /// Full run from SQL and plaintext CSV-equivalent tables.
    pub fn run_sql(&self, sql: &str, db: &PlainDb, strict: bool) -> Result<QueryRun> {
        let (lowered, plan, report) = self.plan_sql(sql, db, strict)?;
        let exec_db = bind_tables(&lowered, db)?;
        let (cost, nodes) = cost_plan(&plan.root, &lowered.catalog, &self.params)?;
        let peak_rows = nodes.iter().map(|n| n.rows).max().unwrap_or(0);
        let outcome = run_plan(
            &plan,
            &exec_db,
            self.transport,
            self.seed,
            self.params.batch_rows,
        )?;
        Ok(QueryRun {
            outcome,
            plan,
            report,
            cost,
            output_names: lowered.output_names.clone(),
            peak_rows,
        })
    }

    /// The plaintext reference answer for the same SQL over the same data.
    pub fn oracle_sql(&self, sql: &str, db: &PlainDb, strict: bool) -> Result<Vec<Vec<u64>>> {
        let lowered = self.lower_sql(sql, db, strict)?;
        let exec_db = bind_tables(&lowered, db)?;
        let plain: BTreeMap<String, PlainTable> = exec_db
            .iter()
            .map(|(k, (cols, rows))| {
                (
                    k.clone(),
                    PlainTable {
                        columns: cols.clone(),
                        rows: rows.clone(),
                    },
                )
            })
            .collect();
        Ok(oracle_eval(&lowered.plan.root, &plain)?.rows)
    }
}

/// Renames base-table data into the aliases and column names the plan uses.
pub fn bind_tables(lowered: &Lowered, db: &PlainDb) -> Result<PlainDb> {
    let mut out = PlainDb::new();
    for (alias, (base, base_cols)) in &lowered.bindings {
        let (cols, rows) = db
            .get(base)
            .ok_or_else(|| anyhow!("no data for table {base}"))?;
        // reorder the data columns to the binding's expectation
        let idx: Vec<usize> = base_cols
            .iter()
            .map(|c| {
                cols.iter()
                    .position(|x| x == c)
                    .ok_or_else(|| anyhow!("table {base} lacks column {c}"))
            })
            .collect::<Result<_>>()?;
        let plan_cols = lowered
            .catalog
            .get(alias)
            .map(|t| t.columns.clone())
            .map_err(|e| anyhow!("{e}"))?;
        let rows: Vec<Vec<u64>> = rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect();
        out.insert(alias.clone(), (plan_cols, rows));
    }
    Ok(out)
}

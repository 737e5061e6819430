//! Command-line front end: share generation, query execution, cost
//! explanation, and the benchmark suite.
//!
//! Exit codes: 0 success, 2 usage, 3 query error, 4 protocol error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use obliq_core::cost::{cost_plan, CostParams};
use obliq_core::planner::OptimizerConfig;
use obliq_core::runtime::TransportKind;

use obliq_cli::driver::{bind_tables, Driver};
use obliq_cli::ingest::{self, Manifest};
use obliq_cli::queries::{Bench, PlainDb};

#[derive(Parser)]
#[command(name = "obliq", about = "Oblivious relational queries over 3-party replicated secret sharing", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Weight per primitive operation in the plan objective.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Weight per communication round in the plan objective.
    #[arg(long, default_value_t = 1000.0)]
    beta: f64,
    /// Execute the lowered plan without any optimizer rewrites.
    #[arg(long)]
    no_optimize: bool,
    /// Join evaluation batch size (output rows per predicate batch).
    #[arg(long, default_value_t = 4096)]
    batch_rows: usize,
    /// Transport between the parties. Overridden by SECRECY_TRANSPORT.
    #[arg(long, default_value = "inproc")]
    transport: String,
    /// Seed for the correlated-randomness setup and data sharing.
    #[arg(long, default_value_t = 0x0b11_9e55)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest CSV files into per-party share files plus a public manifest.
    ShareGen {
        /// Directory of <table>.csv inputs.
        #[arg(long)]
        data: PathBuf,
        /// Query whose plan decides the proactive difference columns.
        #[arg(long)]
        query: Option<String>,
        /// Output directory for share files and manifest.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Parse, plan, and execute a query; result rows go to stdout as CSV.
    Run {
        /// SQL text, or @path to read it from a file.
        query: String,
        /// Directory of <table>.csv inputs (in-process dealer).
        #[arg(long, conflicts_with = "shares")]
        data: Option<PathBuf>,
        /// Directory of pre-generated share files and manifest.json.
        #[arg(long)]
        shares: Option<PathBuf>,
        /// Also run the plaintext oracle and diff the result.
        #[arg(long)]
        oracle: bool,
        /// Write per-party traces as JSON lines to this path.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the plan and per-node costs to stderr.
        #[arg(long)]
        explain: bool,
        /// Accept non-aggregate, non-distinct outputs.
        #[arg(long)]
        no_strict: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Show the chosen plan and its exact cost table without executing.
    Explain {
        /// SQL text, or @path to read it from a file.
        query: String,
        #[arg(long)]
        data: PathBuf,
        /// Emit the plan tree and node costs as JSON.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        no_strict: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the built-in query suite, optimized vs baseline, and report.
    Bench {
        /// Suite: all, medical, accounts, micro — or one query name.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Comma-separated input cardinalities.
        #[arg(long, default_value = "16,64")]
        sizes: String,
        /// Emit the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<obliq_core::runtime::ProtocolError>().is_some() {
                4
            } else {
                3
            }
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ShareGen {
            data,
            query,
            out,
            common,
        } => share_gen(&data, query.as_deref(), &out, &common),
        Command::Run {
            query,
            data,
            shares,
            oracle,
            trace,
            explain,
            no_strict,
            common,
        } => match (&data, &shares) {
            (Some(d), None) => run(&query, d, oracle, trace.as_deref(), explain, !no_strict, &common),
            (None, Some(s)) => {
                run_from_shares(&query, s, trace.as_deref(), explain, !no_strict, &common)
            }
            _ => bail!("run needs exactly one of --data or --shares"),
        },
        Command::Explain {
            query,
            data,
            json,
            no_strict,
            common,
        } => explain_cmd(&query, &data, json, !no_strict, &common),
        Command::Bench {
            suite,
            sizes,
            json,
            common,
        } => bench(&suite, &sizes, json, &common),
    }
}

fn driver_from(common: &CommonOpts) -> Result<Driver> {
    let transport = match std::env::var("SECRECY_TRANSPORT")
        .unwrap_or_else(|_| common.transport.clone())
        .as_str()
    {
        "inproc" => TransportKind::InProcess,
        "tcp" => TransportKind::Tcp,
        other => bail!("unknown transport {other:?} (expected inproc or tcp)"),
    };
    Ok(Driver {
        params: CostParams {
            alpha: common.alpha,
            beta: common.beta,
            batch_rows: common.batch_rows,
        },
        optimize: !common.no_optimize,
        config: if common.no_optimize {
            OptimizerConfig::disabled()
        } else {
            OptimizerConfig::default()
        },
        transport,
        seed: common.seed,
    })
}

fn query_text(arg: &str) -> Result<String> {
    if let Some(path) = arg.strip_prefix('@') {
        return fs::read_to_string(path).with_context(|| format!("reading {path}"));
    }
    Ok(arg.to_string())
}

/// Loads every <table>.csv under the directory into encoded plaintext.
fn load_csv_dir(dir: &Path) -> Result<(PlainDb, BTreeMap<String, BTreeMap<u64, String>>)> {
    let mut db = PlainDb::new();
    let mut dicts = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad csv filename"))?
            .to_string();
        let table = ingest::read_csv(&path)?;
        dicts.insert(name.clone(), table.dictionary.clone());
        db.insert(name, (table.columns, table.rows));
    }
    if db.is_empty() {
        bail!("no .csv files in {}", dir.display());
    }
    Ok((db, dicts))
}

fn share_gen(data: &Path, query: Option<&str>, out: &Path, common: &CommonOpts) -> Result<()> {
    let driver = driver_from(common)?;
    let (db, dicts) = load_csv_dir(data)?;
    // the query's optimized plan decides which difference shares to request
    let (bound, bases, proactive) = match query {
        Some(q) => {
            let sql = query_text(q)?;
            let (lowered, plan, _) = driver.plan_sql(&sql, &db, true)?;
            (
                bind_tables(&lowered, &db)?,
                lowered.bindings.clone(),
                plan.annotations.proactive,
            )
        }
        None => (
            db.clone(),
            db.iter()
                .map(|(k, (c, _))| (k.clone(), (k.clone(), c.clone())))
                .collect(),
            Vec::new(),
        ),
    };
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::default();
    let mut encoded = BTreeMap::new();
    for (alias, (cols, rows)) in &bound {
        let dictionary = bases
            .get(alias)
            .and_then(|(base, _)| dicts.get(base))
            .cloned()
            .unwrap_or_default();
        encoded.insert(
            alias.clone(),
            (
                cols.clone(),
                obliq_cli::ingest::EncodedTable {
                    columns: cols.clone(),
                    types: vec![obliq_cli::values::ColumnType::Int; cols.len()],
                    rows: rows.clone(),
                    dictionary,
                },
            ),
        );
    }
    let (dbs, m) = ingest::share_database_files(&encoded, &bases, &proactive, common.seed)?;
    manifest.tables = m.tables;
    for (party, db) in dbs.iter().enumerate() {
        for (name, table) in db {
            let path = out.join(format!("{}.p{}.srs", name, party + 1));
            ingest::write_share_file(&path, party as u8 + 1, table)?;
        }
    }
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "shared {} table(s) for 3 parties into {}",
        manifest.tables.len(),
        out.display()
    );
    Ok(())
}

fn run(
    query: &str,
    data: &Path,
    oracle: bool,
    trace: Option<&Path>,
    explain: bool,
    strict: bool,
    common: &CommonOpts,
) -> Result<()> {
    let driver = driver_from(common)?;
    let sql = query_text(query)?;
    let (db, dicts) = load_csv_dir(data)?;
    let run = driver.run_sql(&sql, &db, strict)?;

    if explain {
        print_explain(&run, common)?;
    }
    if let Some(path) = trace {
        let mut f = fs::File::create(path)?;
        for t in &run.outcome.traces {
            f.write_all(t.to_jsonl().as_bytes())?;
        }
    }
    // present: header, then rows with text hashes mapped back where known
    let mut dict_all: BTreeMap<u64, String> = BTreeMap::new();
    for d in dicts.values() {
        dict_all.extend(d.iter().map(|(k, v)| (*k, v.clone())));
    }
    let mut names = if run.output_names.len() == run.outcome.opened.columns.len() {
        run.output_names.clone()
    } else {
        run.outcome.opened.columns.clone()
    };
    // AVG opens as its (sum, count) pair; the analyst divides here
    let avg_pair = run
        .outcome
        .opened
        .columns
        .iter()
        .position(|c| c == "a_g")
        .zip(run.outcome.opened.columns.iter().position(|c| c == "a_g_cnt"))
        .filter(|_| names.iter().any(|n| n.to_ascii_uppercase().starts_with("AVG")));
    if let Some((_, cnt_idx)) = avg_pair {
        names.remove(cnt_idx.min(names.len() - 1));
    }
    println!("{}", names.join(","));
    for row in &run.outcome.opened.rows {
        let mut cells: Vec<String> = row
            .iter()
            .map(|v| match dict_all.get(v) {
                Some(s) => s.clone(),
                None => (*v as i64).to_string(),
            })
            .collect();
        if let Some((sum_idx, cnt_idx)) = avg_pair {
            let sum = row[sum_idx] as i64 as f64;
            let count = row[cnt_idx] as f64;
            cells[sum_idx] = if count > 0.0 {
                format!("{:.3}", sum / count)
            } else {
                "0".to_string()
            };
            cells.remove(cnt_idx);
        }
        println!("{}", cells.join(","));
    }

    if oracle {
        let want = driver.oracle_sql(&sql, &db, strict)?;
        let got = obliq_core::oracle::normalize(run.outcome.opened.rows.clone());
        let want = obliq_core::oracle::normalize(want);
        if got == want {
            eprintln!("oracle: results match ({} rows)", got.len());
        } else {
            bail!("oracle mismatch: engine {got:?} vs oracle {want:?}");
        }
    }
    let rounds = run.outcome.traces[0].total_rounds();
    let ops = run.outcome.ops[0].total();
    eprintln!(
        "rounds={} ops={} bytes={} randomness_draws={} (model: rounds={} ops={})",
        rounds,
        ops,
        run.outcome.traces[0].total_bytes(),
        run.outcome.randomness_draws[0],
        run.cost.rounds,
        run.cost.ops
    );
    Ok(())
}

/// Executes a query over pre-distributed share files: the parties load
/// their own shares, so no dealer touches plaintext here.
fn run_from_shares(
    query: &str,
    dir: &Path,
    trace: Option<&Path>,
    explain: bool,
    strict: bool,
    common: &CommonOpts,
) -> Result<()> {
    let driver = driver_from(common)?;
    let sql = query_text(query)?;
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .context("reading manifest.json")?;

    // lower against the base schemas recorded at ingestion; the same
    // deterministic lowering reproduces the alias names the files use
    let mut db = obliq_cli::queries::PlainDb::new();
    for t in &manifest.tables {
        db.entry(t.base.clone()).or_insert_with(|| {
            (
                t.base_columns.clone(),
                vec![vec![0; t.base_columns.len()]; t.live_rows],
            )
        });
    }
    let lowered = driver.lower_sql(&sql, &db, strict)?;
    let (plan, report) = if driver.optimize {
        let (p, r) = obliq_core::planner::optimize(
            &lowered.plan,
            &lowered.catalog,
            &driver.params,
            &driver.config,
        )?;
        (p, Some(r))
    } else {
        let mut p = lowered.plan.clone();
        p.root = obliq_core::planner::strip_physical_opts(&p.root);
        (p, None)
    };
    // every difference share the plan relies on must have been produced
    // at ingestion (manifest columns use the same plan-level names)
    for need in &plan.annotations.proactive {
        let served = manifest
            .tables
            .iter()
            .any(|t| t.proactive.iter().any(|p| p == need));
        if !served {
            bail!(
                "share files lack the difference shares for {:?}; regenerate with share-gen --query",
                need.0
            );
        }
    }

    let mut dbs: [obliq_core::exec::PartyDb; 3] = Default::default();
    for t in &manifest.tables {
        for party in 1..=3u8 {
            let path = dir.join(format!("{}.p{}.srs", t.name, party));
            let (pid, table) = ingest::read_share_file(&path, t)?;
            if pid != party {
                bail!("{} belongs to party {pid}", path.display());
            }
            dbs[party as usize - 1].insert(t.name.clone(), table);
        }
    }
    let outcome = obliq_core::exec::run_plan_shared(
        &plan.root,
        dbs,
        driver.transport,
        driver.seed,
        common.batch_rows,
    )?;

    if explain {
        if let Some(r) = &report {
            eprintln!("rules applied: {:?}", r.applied_rules);
        }
    }
    if let Some(path) = trace {
        let mut f = fs::File::create(path)?;
        for t in &outcome.traces {
            f.write_all(t.to_jsonl().as_bytes())?;
        }
    }
    let mut dict: BTreeMap<u64, String> = BTreeMap::new();
    for t in &manifest.tables {
        for (k, v) in &t.dictionary {
            if let Ok(h) = k.parse::<u64>() {
                dict.insert(h, v.clone());
            }
        }
    }
    println!("{}", outcome.opened.columns.join(","));
    for row in &outcome.opened.rows {
        let cells: Vec<String> = row
            .iter()
            .map(|v| dict.get(v).cloned().unwrap_or_else(|| (*v as i64).to_string()))
            .collect();
        println!("{}", cells.join(","));
    }
    eprintln!(
        "rounds={} ops={} bytes={}",
        outcome.traces[0].total_rounds(),
        outcome.ops[0].total(),
        outcome.traces[0].total_bytes()
    );
    Ok(())
}

fn print_explain(run: &obliq_cli::driver::QueryRun, common: &CommonOpts) -> Result<()> {
    eprintln!("plan:");
    for line in run.plan.to_json().lines() {
        eprintln!("  {line}");
    }
    if let Some(report) = &run.report {
        eprintln!(
            "rules applied: {}",
            if report.applied_rules.is_empty() {
                "none".to_string()
            } else {
                report.applied_rules.join(", ")
            }
        );
        eprintln!(
            "baseline: ops={} rounds={} total={}",
            report.baseline_cost.ops, report.baseline_cost.rounds, report.baseline_total
        );
        eprintln!(
            "chosen:   ops={} rounds={} total={} (alpha={}, beta={})",
            report.cost.ops, report.cost.rounds, report.total, common.alpha, common.beta
        );
        eprintln!(
            "{:<22} {:>8} {:>12} {:>10} {:>16}",
            "node", "rows", "ops", "rounds", "cumulative"
        );
        for n in &report.nodes {
            eprintln!(
                "{:<22} {:>8} {:>12} {:>10} {:>16}",
                n.node,
                n.rows,
                n.cost.ops,
                n.cost.rounds,
                format!("{}/{}", n.cumulative.ops, n.cumulative.rounds)
            );
        }
    }
    Ok(())
}

fn explain_cmd(query: &str, data: &Path, json: bool, strict: bool, common: &CommonOpts) -> Result<()> {
    let driver = driver_from(common)?;
    let sql = query_text(query)?;
    let (db, _) = load_csv_dir(data)?;
    let (lowered, plan, report) = driver.plan_sql(&sql, &db, strict)?;
    let (cost, nodes) = cost_plan(&plan.root, &lowered.catalog, &driver.params)?;
    if json {
        let doc = serde_json::json!({
            "plan": serde_json::from_str::<serde_json::Value>(&plan.to_json())?,
            "cost": { "ops": cost.ops, "rounds": cost.rounds },
            "nodes": nodes,
            "rules": report.as_ref().map(|r| r.applied_rules.clone()).unwrap_or_default(),
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!("{}", plan.to_json());
        if let Some(r) = &report {
            println!("rules: {:?}", r.applied_rules);
        }
        println!("{:<22} {:>8} {:>12} {:>10}", "node", "rows", "ops", "rounds");
        for n in &nodes {
            println!("{:<22} {:>8} {:>12} {:>10}", n.node, n.rows, n.cost.ops, n.cost.rounds);
        }
        println!("total: ops={} rounds={}", cost.ops, cost.rounds);
    }
    Ok(())
}

fn bench(suite: &str, sizes: &str, json: bool, common: &CommonOpts) -> Result<()> {
    let benches = match Bench::from_name(suite) {
        Some(b) => vec![b],
        None => Bench::by_suite(suite),
    };
    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| s.trim().parse().context("bad size"))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for b in &benches {
        for &n in &sizes {
            let db = b.dataset(n, common.seed);
            let mut entry = serde_json::Map::new();
            entry.insert("query".into(), b.name().into());
            entry.insert("n".into(), n.into());
            for (label, optimize) in [("optimized", true), ("baseline", false)] {
                let mut driver = driver_from(common)?;
                driver.optimize = optimize && !common.no_optimize;
                if !driver.optimize {
                    driver.config = OptimizerConfig::disabled();
                }
                let started = Instant::now();
                let run = driver.run_sql(b.sql(), &db, true)?;
                let elapsed = started.elapsed().as_secs_f64() * 1e3;
                let rounds = run.outcome.traces[0].total_rounds();
                let ops = run.outcome.ops[0].total();
                let bytes = run.outcome.traces[0].total_bytes();
                entry.insert(format!("{label}_rounds"), rounds.into());
                entry.insert(format!("{label}_ops"), ops.into());
                entry.insert(format!("{label}_bytes"), bytes.into());
                entry.insert(format!("{label}_ms"), format!("{elapsed:.1}").into());
                entry.insert(format!("{label}_peak_rows"), run.peak_rows.into());
            }
            rows.push(serde_json::Value::Object(entry));
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        println!(
            "{:<16} {:>6} {:>11} {:>11} {:>12} {:>12} {:>9} {:>9} {:>9} {:>10}",
            "query", "n", "opt_rounds", "base_rounds", "opt_ops", "base_ops", "opt_ms", "base_ms", "opt_peak", "base_peak"
        );
        for r in &rows {
            println!(
                "{:<16} {:>6} {:>11} {:>11} {:>12} {:>12} {:>9} {:>9} {:>9} {:>10}",
                r["query"].as_str().unwrap_or(""),
                r["n"],
                r["optimized_rounds"],
                r["baseline_rounds"],
                r["optimized_ops"],
                r["baseline_ops"],
                r["optimized_ms"].as_str().unwrap_or(""),
                r["baseline_ms"].as_str().unwrap_or(""),
                r["optimized_peak_rows"],
                r["baseline_peak_rows"],
            );
        }
    }
    Ok(())
}

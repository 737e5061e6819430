//! CSV ingestion and the per-party share file format.
//!
//! Share files are binary: header `{magic "SRS1", party u8, mode u8,
//! rows u64, cols u16}` followed by row-major `(lo, hi)` little-endian u64
//! pairs per cell. A JSON manifest beside the share files carries the
//! public schema, padding, proactive columns, and the text dictionary for
//! presentation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use obliq_core::predicate::proactive_col_name;
use obliq_core::share::{ProactiveKind, SharingMode, SENTINEL};
use obliq_core::table::{ColumnKind, ColumnMeta, SharedTable};

use crate::values::{encode_cell, infer_type, ColumnType};

const MAGIC: &[u8; 4] = b"SRS1";

/// Public, analyst-visible description of one ingested table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableManifest {
    /// Plan-level relation name (the alias the query binds).
    pub name: String,
    /// Base table this relation was ingested from, with its CSV columns.
    pub base: String,
    pub base_columns: Vec<String>,
    pub columns: Vec<String>,
    pub types: Vec<ColumnType>,
    /// Owner-computed difference columns appended after the base columns.
    pub proactive: Vec<(String, ProactiveKind, u64)>,
    pub live_rows: usize,
    pub padded_rows: usize,
    /// Base columns were screened against the reserved sentinel value.
    pub sentinel_checked: bool,
    /// hash -> original text, for presentation only
    pub dictionary: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub tables: Vec<TableManifest>,
}

/// A parsed CSV relation with encoded 64-bit cells.
pub struct EncodedTable {
    pub columns: Vec<String>,
    pub types: Vec<ColumnType>,
    pub rows: Vec<Vec<u64>>,
    pub dictionary: BTreeMap<u64, String>,
}

/// Reads one CSV file (header required, RFC 4180 quoting) and encodes its
/// cells. Live sentinel values are rejected.
pub fn read_csv(path: &Path) -> Result<EncodedTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let columns: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
    let mut types = Vec::new();
    for c in 0..columns.len() {
        let cells: Vec<&str> = records.iter().map(|r| r.get(c).unwrap_or("")).collect();
        types.push(infer_type(&cells));
    }
    let mut dictionary = BTreeMap::new();
    let mut rows = Vec::with_capacity(records.len());
    for (ri, rec) in records.iter().enumerate() {
        if rec.len() != columns.len() {
            bail!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                ri + 2,
                rec.len(),
                columns.len()
            );
        }
        let mut row = Vec::with_capacity(columns.len());
        for (c, cell) in rec.iter().enumerate() {
            let v = encode_cell(cell, types[c], &mut dictionary)
                .map_err(|e| anyhow::anyhow!("{}: row {}: {}", path.display(), ri + 2, e))?;
            if v == SENTINEL {
                bail!(
                    "{}: column {} holds the reserved sentinel value",
                    path.display(),
                    columns[c]
                );
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: empty relation", path.display());
    }
    Ok(EncodedTable {
        columns,
        types,
        rows,
        dictionary,
    })
}

/// Shares every plan-relevant table; returns the per-party databases and
/// the public manifest.
pub fn share_database_files(
    tables: &BTreeMap<String, (Vec<String>, EncodedTable)>,
    bases: &BTreeMap<String, (String, Vec<String>)>,
    proactive: &[(String, ProactiveKind, u64)],
    seed: u64,
) -> Result<([BTreeMap<String, SharedTable>; 3], Manifest)> {
    let mut dbs: [BTreeMap<String, SharedTable>; 3] =
        [BTreeMap::new(), BTreeMap::new(), BTreeMap::new()];
    let mut manifest = Manifest::default();
    for (i, (alias, (plan_cols, table))) in tables.iter().enumerate() {
        let mut tm_shared = share_plain(
            alias,
            table,
            plan_cols,
            proactive,
            seed.wrapping_add(i as u64),
        )?;
        if let Some((base, base_cols)) = bases.get(alias) {
            tm_shared.1.base = base.clone();
            tm_shared.1.base_columns = base_cols.clone();
        }
        let (shared, tm) = tm_shared;
        for (db, t) in dbs.iter_mut().zip(shared) {
            db.insert(alias.clone(), t);
        }
        manifest.tables.push(tm);
    }
    Ok((dbs, manifest))
}

/// Like `share_encoded` but with padding handled by the engine-side
/// constant sharing (all parties agree on pad rows as public constants).
fn share_plain(
    name: &str,
    table: &EncodedTable,
    plan_columns: &[String],
    proactive: &[(String, ProactiveKind, u64)],
    seed: u64,
) -> Result<([SharedTable; 3], TableManifest)> {
    let mut col_names: Vec<String> = plan_columns.to_vec();
    let mut rows = table.rows.clone();
    let mut used = Vec::new();
    for (col, kind, c) in proactive {
        if let Some(i) = plan_columns.iter().position(|x| x == col) {
            col_names.push(proactive_col_name(col, *kind, *c));
            for row in rows.iter_mut() {
                row.push(kind.apply(row[i], *c));
            }
            used.push((col.clone(), *kind, *c));
        }
    }
    let live = rows.len();
    let mut rng = StdRng::seed_from_u64(seed);
    let refs: Vec<&str> = col_names.iter().map(|s| s.as_str()).collect();
    let mut shared =
        obliq_core::table::deal_table_prefix_checked(&refs, &rows, plan_columns.len(), &mut rng)?;
    for t in shared.iter_mut() {
        for m in t.meta.iter_mut().skip(plan_columns.len()) {
            m.kind = ColumnKind::Derived;
        }
    }
    let manifest = TableManifest {
        name: name.to_string(),
        base: name.to_string(),
        base_columns: plan_columns.to_vec(),
        columns: plan_columns.to_vec(),
        types: table.types.clone(),
        proactive: used,
        live_rows: live,
        padded_rows: live.next_power_of_two(),
        sentinel_checked: true,
        dictionary: table
            .dictionary
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    };
    Ok((shared, manifest))
}

// ---------------------------------------------------------------------------
// Share file IO
// ---------------------------------------------------------------------------

pub fn write_share_file(path: &Path, party: u8, t: &SharedTable) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(18 + t.rows * t.cols.len() * 16);
    buf.extend_from_slice(MAGIC);
    buf.push(party);
    let mode = match t.cols.first().map(|c| c.mode) {
        Some(SharingMode::Arithmetic) => 1u8,
        _ => 0u8,
    };
    buf.push(mode);
    buf.extend_from_slice(&(t.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(t.cols.len() as u16).to_le_bytes());
    for r in 0..t.rows {
        for c in &t.cols {
            buf.extend_from_slice(&c.lo[r].to_le_bytes());
            buf.extend_from_slice(&c.hi[r].to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a share file back; column names and kinds come from the manifest.
pub fn read_share_file(path: &Path, manifest: &TableManifest) -> Result<(u8, SharedTable)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 18 || &buf[0..4] != MAGIC {
        bail!("{}: not a share file", path.display());
    }
    let party = buf[4];
    let rows = u64::from_le_bytes(buf[6..14].try_into().unwrap()) as usize;
    let cols = u16::from_le_bytes(buf[14..16].try_into().unwrap()) as usize;
    let expected = 16 + rows * cols * 16;
    if buf.len() != expected {
        bail!("{}: truncated share file", path.display());
    }
    let mut meta = Vec::new();
    for name in &manifest.columns {
        meta.push(ColumnMeta::data(name));
    }
    for (col, kind, c) in &manifest.proactive {
        meta.push(ColumnMeta {
            name: proactive_col_name(col, *kind, *c),
            kind: ColumnKind::Derived,
            mode: SharingMode::Boolean,
        });
    }
    if meta.len() != cols {
        bail!(
            "{}: manifest lists {} columns, file has {}",
            path.display(),
            meta.len(),
            cols
        );
    }
    let mut table = SharedTable::empty(meta);
    table.rows = rows;
    for c in table.cols.iter_mut() {
        c.lo.reserve(rows);
        c.hi.reserve(rows);
    }
    let mut off = 16;
    for _ in 0..rows {
        for c in 0..cols {
            let lo = u64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            let hi = u64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
            table.cols[c].lo.push(lo);
            table.cols[c].hi.push(hi);
            off += 16;
        }
    }
    Ok((party, table))
}

//! Secret-shared relations.
//!
//! A `SharedTable` is one party's view of a relation: per-column share
//! vectors plus protocol-managed flag columns. Cardinality and schema are
//! public; every cell value is secret-shared. Operators never change the
//! cardinality except join (cartesian product) and order-by with limit.

use rand::Rng;

use crate::error::EngineError;
use crate::primitives::ShareVec;
use crate::runtime::PartyCtx;
use crate::share::{self, ShareValue, SharingMode, SENTINEL};

/// Role of a column within the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Data,
    /// The current validity bit: set by distinct/group-by/masking/padding.
    Valid,
    /// A pending selection or join bit, conjoined into validity at masking.
    Flag,
    /// Aggregate accumulator.
    Agg,
    /// Owner-provided auxiliary shares (proactive differences): travel with
    /// the row but are not relation attributes and never open.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub mode: SharingMode,
}

impl ColumnMeta {
    pub fn data(name: &str) -> Self {
        ColumnMeta {
            name: name.to_string(),
            kind: ColumnKind::Data,
            mode: SharingMode::Boolean,
        }
    }
}

/// One party's share of a relation.
#[derive(Debug, Clone)]
pub struct SharedTable {
    pub meta: Vec<ColumnMeta>,
    pub cols: Vec<ShareVec>,
    pub rows: usize,
}

impl SharedTable {
    pub fn empty(meta: Vec<ColumnMeta>) -> Self {
        let cols = meta.iter().map(|m| ShareVec::new(m.mode)).collect();
        SharedTable {
            meta,
            cols,
            rows: 0,
        }
    }

    pub fn col_index(&self, name: &str) -> Result<usize, EngineError> {
        self.meta
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| EngineError::UnknownColumn(name.to_string()))
    }

    pub fn col(&self, name: &str) -> Result<&ShareVec, EngineError> {
        Ok(&self.cols[self.col_index(name)?])
    }

    pub fn valid_index(&self) -> Option<usize> {
        self.meta.iter().position(|m| m.kind == ColumnKind::Valid)
    }

    /// Indices of all bit columns that gate row validity: the valid bit
    /// plus any pending selection/join flags.
    pub fn gate_indices(&self) -> Vec<usize> {
        self.meta
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m.kind, ColumnKind::Valid | ColumnKind::Flag))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn data_indices(&self) -> Vec<usize> {
        self.meta
            .iter()
            .enumerate()
            .filter(|(_, m)| m.kind == ColumnKind::Data)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn gather(&self, idx: &[usize]) -> SharedTable {
        SharedTable {
            meta: self.meta.clone(),
            cols: self.cols.iter().map(|c| c.gather(idx)).collect(),
            rows: idx.len(),
        }
    }

    /// Returns a fresh unique column name based on `base`.
    pub fn fresh_name(&self, base: &str) -> String {
        if self.col_index(base).is_err() {
            return base.to_string();
        }
        let mut i = 0;
        loop {
            let name = format!("{base}#{i}");
            if self.col_index(&name).is_err() {
                return name;
            }
            i += 1;
        }
    }

    /// Demotes the current valid column, if any, to a pending flag so a new
    /// validity bit can take its place.
    pub fn demote_valid(&mut self) {
        if let Some(i) = self.valid_index() {
            self.meta[i].kind = ColumnKind::Flag;
        }
    }

    pub fn push_column(&mut self, meta: ColumnMeta, col: ShareVec) {
        debug_assert_eq!(col.len(), self.rows);
        self.meta.push(meta);
        self.cols.push(col);
    }

    /// Appends `extra` rows of the invalid tuple: every attribute holds the
    /// public sentinel and the valid bit is 0. A valid column is created if
    /// the table does not have one.
    pub fn pad_with_invalid(&mut self, ctx: &PartyCtx, extra: usize) {
        if self.valid_index().is_none() {
            let ones = ShareVec::constant(ctx, 1, self.rows, SharingMode::Boolean);
            self.push_column(
                ColumnMeta {
                    name: self.fresh_name("a_v"),
                    kind: ColumnKind::Valid,
                    mode: SharingMode::Boolean,
                },
                ones,
            );
        }
        let valid = self.valid_index().unwrap();
        for (i, col) in self.cols.iter_mut().enumerate() {
            let fill = if i == valid {
                ShareVec::constant(ctx, 0, extra, SharingMode::Boolean)
            } else {
                ShareVec::constant(ctx, SENTINEL, extra, col.mode)
            };
            col.extend(&fill);
        }
        self.rows += extra;
    }
}

/// Dealer-side: shares a plaintext column-major relation into the three
/// parties' tables. Rejects live sentinel values in the first
/// `checked_cols` columns; trailing owner-derived difference columns are
/// exempt since they never serve as keys.
pub fn deal_table_prefix_checked<R: Rng>(
    names: &[&str],
    rows: &[Vec<ShareValue>],
    checked_cols: usize,
    rng: &mut R,
) -> Result<[SharedTable; 3], EngineError> {
    let meta: Vec<ColumnMeta> = names.iter().map(|n| ColumnMeta::data(n)).collect();
    let mut out = [
        SharedTable::empty(meta.clone()),
        SharedTable::empty(meta.clone()),
        SharedTable::empty(meta),
    ];
    for row in rows {
        for (c, &v) in row.iter().enumerate() {
            if v == SENTINEL && c < checked_cols {
                return Err(EngineError::SentinelCollision(names[c].to_string()));
            }
            let (a, b, cc) = share::share(v, SharingMode::Boolean, rng);
            out[0].cols[c].push(a);
            out[1].cols[c].push(b);
            out[2].cols[c].push(cc);
        }
    }
    for t in out.iter_mut() {
        t.rows = rows.len();
    }
    Ok(out)
}

/// Shares a relation with the sentinel check on every column.
pub fn deal_table<R: Rng>(
    names: &[&str],
    rows: &[Vec<ShareValue>],
    rng: &mut R,
) -> Result<[SharedTable; 3], EngineError> {
    deal_table_prefix_checked(names, rows, names.len(), rng)
}

/// Analyst-side: reconstructs a table from the three parties' shares.
/// Rows whose valid bit opens to 0 are dropped; flag and valid columns are
/// stripped from the output.
pub fn open_table(parts: &[SharedTable; 3]) -> Result<OpenedTable, EngineError> {
    let t0 = &parts[0];
    let n = t0.rows;
    let mut cells: Vec<Vec<ShareValue>> = Vec::with_capacity(t0.cols.len());
    for c in 0..t0.cols.len() {
        let mut col = Vec::with_capacity(n);
        for i in 0..n {
            col.push(share::reconstruct(
                parts[0].cols[c].get(i),
                parts[1].cols[c].get(i),
                parts[2].cols[c].get(i),
            )?);
        }
        cells.push(col);
    }
    let keep: Vec<usize> = t0
        .meta
        .iter()
        .enumerate()
        .filter(|(_, m)| matches!(m.kind, ColumnKind::Data | ColumnKind::Agg))
        .map(|(i, _)| i)
        .collect();
    let gates = t0.gate_indices();
    let mut rows = Vec::new();
    for i in 0..n {
        let alive = gates.iter().all(|&g| cells[g][i] & 1 == 1);
        if gates.is_empty() || alive {
            rows.push(keep.iter().map(|&c| cells[c][i]).collect());
        }
    }
    Ok(OpenedTable {
        columns: keep.iter().map(|&c| t0.meta[c].name.clone()).collect(),
        rows,
    })
}

/// A reconstructed relation at the analyst.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenedTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<ShareValue>>,
}

impl OpenedTable {
    pub fn sorted(mut self) -> Self {
        self.rows.sort();
        self
    }
}

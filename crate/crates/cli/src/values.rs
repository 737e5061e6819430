//! Encoding of CSV and SQL literals into 64-bit words: integers pass
//! through (two's complement), ISO dates become day counts so interval
//! arithmetic stays integer arithmetic, and strings hash to 64 bits with a
//! collision check at ingestion.

use std::collections::BTreeMap;

pub const SENTINEL: u64 = u64::MAX;

/// FNV-1a, fixed here so share files stay stable across builds.
pub fn hash_string(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    if h == SENTINEL {
        // keep the reserved value free; the chance of hitting it is 2^-64
        h ^= 1;
    }
    h
}

/// Days since 1970-01-01 for an ISO `YYYY-MM-DD` date, via the standard
/// civil-calendar conversion.
pub fn parse_date(s: &str) -> Option<i64> {
    let mut parts = s.split('-');
    let y: i64 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let d: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    Some(era * 146_097 + doe - 719_468)
}

/// Encodes a SQL string literal: dates as day counts, everything else by
/// hash.
pub fn encode_literal(s: &str) -> u64 {
    match parse_date(s) {
        Some(days) => days as u64,
        None => hash_string(s),
    }
}

/// Column type inferred at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ColumnType {
    Int,
    Date,
    Text,
}

/// Encodes one CSV cell under the inferred type, recording text values in
/// the dictionary for presentation.
pub fn encode_cell(
    cell: &str,
    ty: ColumnType,
    dict: &mut BTreeMap<u64, String>,
) -> Result<u64, String> {
    match ty {
        ColumnType::Int => cell
            .trim()
            .parse::<i64>()
            .map(|v| v as u64)
            .map_err(|_| format!("not an integer: {cell:?}")),
        ColumnType::Date => parse_date(cell.trim())
            .map(|v| v as u64)
            .ok_or_else(|| format!("not a date: {cell:?}")),
        ColumnType::Text => {
            let h = hash_string(cell.trim());
            if let Some(prev) = dict.get(&h) {
                if prev != cell.trim() {
                    return Err(format!("hash collision between {prev:?} and {cell:?}"));
                }
            } else {
                dict.insert(h, cell.trim().to_string());
            }
            Ok(h)
        }
    }
}

pub fn infer_type(cells: &[&str]) -> ColumnType {
    if cells.iter().all(|c| c.trim().parse::<i64>().is_ok()) {
        ColumnType::Int
    } else if cells.iter().all(|c| parse_date(c.trim()).is_some()) {
        ColumnType::Date
    } else {
        ColumnType::Text
    }
}

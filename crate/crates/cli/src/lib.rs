//! SQL front end, ingestion, and benchmark driver for the oblivious query
//! engine.

pub mod driver;
pub mod ingest;
pub mod lower;
pub mod queries;
pub mod sql;
pub mod values;

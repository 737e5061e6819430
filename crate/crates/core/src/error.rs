//! Engine-wide error type.

use thiserror::Error;

use crate::runtime::ProtocolError;
use crate::share::ShareError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Share(#[from] ShareError),
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sharing mode mismatch")]
    ModeMismatch,
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("live value collides with the reserved sentinel in column {0}")]
    SentinelCollision(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("cardinality {0} is not a power of two")]
    NonPowerOfTwo(usize),
    #[error("rewrite guard failed: {0}")]
    GuardFailed(String),
    #[error("no composition cost defined for operator pair {0} -> {1}")]
    UnknownPair(String, String),
    #[error("input relation is not sorted on the expected keys")]
    PreconditionNotSorted,
    #[error("plan error: {0}")]
    Plan(String),
}

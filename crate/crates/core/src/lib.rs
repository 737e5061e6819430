//! An end-to-end oblivious relational query engine over 3-party replicated
//! secret sharing: oblivious primitives, composable relational operators,
//! an exact operation/round cost model, and a cost-based planner, executable
//! by three message-passing parties with a plaintext oracle for verification.

pub mod correlated;
pub mod cost;
pub mod error;
pub mod exec;
pub mod harness;
pub mod operators;
pub mod plan;
pub mod planner;
pub mod oracle;
pub mod predicate;
pub mod primitives;
pub mod runtime;
pub mod share;
pub mod table;

pub use error::EngineError;

//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by schedule construction, graph lowering, simulation and sweeps.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation precondition does not hold; the message names the constraint.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The stage placement does not fit the schedule it is used with.
    #[error("placement mismatch: {0}")]
    Placement(String),

    /// A table failed validation; `summary` lists the first violations.
    #[error("invalid table ({count} violations; see validate_table): {summary}")]
    InvalidTable { count: usize, summary: String },

    /// Per-worker orders could not be packed into a table.
    #[error("worker orders deadlock: {0}")]
    Deadlock(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("node {0} has no duration annotation")]
    Unannotated(usize),

    #[error("execution graph contains a cycle through {0} unresolved nodes")]
    Cyclic(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

/// Solution-level constraint violations reported by [`crate::mdp::evaluate_solution`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("route count {found} does not match fleet size {expected}")]
    RouteCount { expected: usize, found: usize },
    #[error("vehicle {vehicle} visits unknown node {node}")]
    UnknownNode { vehicle: usize, node: usize },
    #[error("customer {node} is never visited")]
    MissingCustomer { node: usize },
    #[error("customer {node} visited twice (second visit by vehicle {vehicle})")]
    DuplicateVisit { vehicle: usize, node: usize },
    #[error("vehicle {vehicle} carries {load} > capacity {capacity} before reaching node {node}")]
    CapacityExceeded {
        vehicle: usize,
        node: usize,
        load: u64,
        capacity: u32,
    },
    #[error("recorded objective {recorded} but the routes give {recomputed}")]
    ObjectiveMismatch { recorded: f64, recomputed: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("checkpoint integrity check failed for {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

use crate::tree::{NodeId, NodeState};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a generation, reward or embedding backend.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("no recorded fixture for request {0}")]
    MissingFixture(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("node {0} not found")]
    NotFound(NodeId),
    #[error("illegal state for node {node}: {from:?} -> {to:?}")]
    IllegalTransition {
        node: NodeId,
        from: NodeState,
        to: NodeState,
    },
    #[error("node {node} is {state:?}: {reason}")]
    IllegalState {
        node: NodeId,
        state: NodeState,
        reason: &'static str,
    },
    #[error("degenerate embedding: vector has zero norm")]
    DegenerateEmbedding,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: inconsistent trace: {message}")]
    Consistency { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

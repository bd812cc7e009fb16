use thiserror::Error;

pub type Result<T, E = PcfiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PcfiError {
    /// Malformed or inconsistent input (bad ids, shape mismatch, out-of-range
    /// parameters).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("edge ({u}, {v}) references a node outside 0..{num_nodes}")]
    NodeOutOfRange {
        u: usize,
        v: usize,
        num_nodes: usize,
    },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    /// A channel has no observed value that can reach some of its nodes.
    #[error("no source reachable for channel(s) {channels:?}")]
    NoSource { channels: Vec<usize> },

    #[error("relative confidence undefined: node {node} is unreachable in channel {channel}")]
    UndefinedRelativeConfidence { node: usize, channel: usize },

    /// A numerical guarantee failed, e.g. a singular system that the
    /// preconditions rule out.
    #[error("numerical invariant violated: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
}

impl PcfiError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        PcfiError::Input(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        PcfiError::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        PcfiError::Io {
            context: context.into(),
            source,
        }
    }
}

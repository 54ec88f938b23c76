use std::fmt;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dtype mismatch: {0}")]
    DTypeMismatch(String),

    #[error("cannot cast {from} to {to}")]
    Cast { from: &'static str, to: &'static str },

    #[error("index {index} out of bounds for axis {axis} with length {len}")]
    OutOfBounds { index: i64, axis: usize, len: usize },

    #[error("unsupported key: {0}")]
    UnsupportedKey(String),

    #[error("integer division by zero")]
    DivisionByZero,

    #[error("ordering is undefined for complex values")]
    ComplexOrdering,

    #[error("negative integer exponent is not supported for integer base")]
    NegativeExponent,

    #[error("reduction of an empty array has no identity for this operation")]
    EmptyReduce,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank {rank} is not a member of a cluster of size {size}")]
    InvalidRank { rank: usize, size: usize },

    #[error(transparent)]
    Deadlock(#[from] DeadlockError),

    #[error("rank {rank} panicked: {message}")]
    RankPanicked { rank: usize, message: String },

    #[error("rank {rank} failed")]
    Rank {
        rank: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("transport protocol violation: {0}")]
    Protocol(&'static str),

    #[error("cross-rank consistency check failed: {0}")]
    ConsistencyCheck(String),

    #[error("no array is registered under index {0}")]
    UnknownIndex(u64),

    #[error("the array registered under index {0} has been dropped")]
    DeadIndex(u64),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A blocking receive timed out, which the simulated cluster reports as a
/// deadlock. When the wait happened inside a collective, `missing` holds the
/// ranks that never entered it.
#[derive(Debug)]
pub struct DeadlockError {
    pub rank: usize,
    pub waiting_for: usize,
    pub collective: Option<&'static str>,
    pub missing: Vec<usize>,
}

impl fmt::Display for DeadlockError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.collective {
            Some(name) => write!(
                f,
                "deadlock: rank {} timed out in collective `{}` waiting for rank {}; \
                 ranks that never entered: {:?}",
                self.rank, name, self.waiting_for, self.missing
            ),
            None => write!(
                f,
                "deadlock: rank {} timed out waiting for a message from rank {}",
                self.rank, self.waiting_for
            ),
        }
    }
}

impl std::error::Error for DeadlockError {}

impl Error {
    /// True for timeout-style failures, which are usually a downstream
    /// symptom of another rank's error rather than the root cause.
    pub fn is_deadlock(&self) -> bool {
        matches!(self, Error::Deadlock(_))
            || matches!(self, Error::Rank { source, .. } if source.is_deadlock())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

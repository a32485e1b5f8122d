use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected a {expected}-d tensor, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: shapes {a:?} and {b:?} cannot be broadcast together")]
    Broadcast {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("{op}: {what} ({value}) is not divisible by {divisor}")]
    Divisibility {
        op: &'static str,
        what: String,
        value: usize,
        divisor: usize,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("shape {shape:?} holds {expected} elements but {got} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn mismatch(op: &'static str, dim: impl Into<String>, expected: usize, got: usize) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        dim: dim.into(),
        expected,
        got,
    }
}

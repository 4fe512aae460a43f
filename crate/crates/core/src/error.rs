use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dims {dims:?}: {reason}")]
    InvalidDims { dims: Vec<usize>, reason: String },

    #[error("data length {len} does not match dims {dims:?} (expected {expected})")]
    LengthMismatch {
        dims: Vec<usize>,
        len: usize,
        expected: usize,
    },

    #[error("index {index:?} out of bounds for dims {dims:?}")]
    IndexOutOfBounds { index: Vec<usize>, dims: Vec<usize> },

    #[error("shape mismatch: {what}: {left} has dims {left_dims:?}, {right} has dims {right_dims:?}")]
    ShapeMismatch {
        what: String,
        left: String,
        left_dims: Vec<usize>,
        right: String,
        right_dims: Vec<usize>,
    },

    #[error("kernel size {0} is even; only odd kernels are supported")]
    EvenKernel(usize),

    #[error("empty tensor: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tape: {0}")]
    Tape(String),

    #[error("no backward rule registered for op `{0}`")]
    UnregisteredBackward(String),

    #[error("layer is {actual}, operation requires {expected}")]
    Mode {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("stale weight cache: parameters changed since freeze (cached {cached:016x}, current {current:016x})")]
    StaleCache { cached: u64, current: u64 },

    #[error("tensor file: {0}")]
    Format(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(
        what: impl Into<String>,
        left: impl Into<String>,
        left_dims: &[usize],
        right: impl Into<String>,
        right_dims: &[usize],
    ) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            left: left.into(),
            left_dims: left_dims.to_vec(),
            right: right.into(),
            right_dims: right_dims.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

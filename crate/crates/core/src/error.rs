use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes disagree.
    #[error("shape error: {0}")]
    Shape(String),
    /// A layer, network or operator was configured with unusable values.
    #[error("configuration error: {0}")]
    Config(String),
    /// Saved state needed for recomputation is missing, stale or inconsistent.
    #[error("state error: {0}")]
    State(String),
    #[error("quantization error: {0}")]
    Quantization(String),
    /// Memory budget cannot hold even a single sample.
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("decode error: {0}")]
    Decode(String),
    /// Training loss became non-finite.
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;

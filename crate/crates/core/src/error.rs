use thiserror::Error;

use crate::activation::DataRange;
use crate::data_io::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite argument {0}")]
    NonFinite(f64),

    #[error("{kind} activation is undefined at a = {a}")]
    Domain { kind: &'static str, a: f64 },

    #[error("value {value} lies outside the open range {range}")]
    OutOfRange { range: DataRange, value: f64 },

    #[error("exponential activation requires W h < 0; coordinate {index} is {value}")]
    ExponentialDomain { index: usize, value: f64 },

    #[error("dimension mismatch: expected length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("materializing a {rows}x{cols} operator exceeds the cap of {cap} entries")]
    TooLarge { rows: usize, cols: usize, cap: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("all {0} samples in the batch failed to reconstruct")]
    AllSamplesFailed(usize),

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

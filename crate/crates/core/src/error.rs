use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the supported domain")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("classifier row {row} has norm {norm:e}, too small to normalize")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("feature has norm {norm:e}, too small to normalize")]
    DegenerateFeature { norm: f64 },

    /// Analytic derivative requested at a non-differentiable point. The
    /// left-limit value is still reported.
    #[error("theta = {theta} lies at the kink {kink} (left limit {left_limit})")]
    Kink {
        theta: f64,
        kink: f64,
        left_limit: f64,
    },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("boundary equation has no root in the bracket")]
    NoRoot,

    #[error("could not place {classes} separated class means after {attempts} attempts")]
    RejectionFailure { classes: usize, attempts: usize },

    #[error("training diverged at step {step}: mean loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("degenerate protocol: {0}")]
    ProtocolDegenerate(String),

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

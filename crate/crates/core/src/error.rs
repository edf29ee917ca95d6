use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Network or vector dimensions do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// A build or run was configured inconsistently.
    #[error("configuration error: {0}")]
    Config(String),

    /// A text artifact could not be parsed.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at iteration {iteration}, batch index {batch_index}: {detail}")]
    NonFinite {
        iteration: usize,
        batch_index: usize,
        detail: String,
    },

    /// Kernels that should compute the same function disagree.
    #[error("equivalence check failed: {0}")]
    Equivalence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

//! Error type shared by all core modules.

use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, CoreError>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Shapes of operands do not satisfy an operation's contract.
    #[error("dimension error in {op}: {detail}")]
    Dim { op: &'static str, detail: String },

    /// A configuration value is outside its allowed range.
    #[error("config error: {0}")]
    Config(String),

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A query row has no allowed key; upstream produced an all-padding sequence.
    #[error("masking error: query row {row} has no allowed keys")]
    FullyMaskedRow { row: usize },

    /// Audio and video streams are not time-aligned.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A waveform violates a signal-level precondition (e.g. zero power).
    #[error("signal error: {0}")]
    Signal(String),

    /// An input sequence is too short for the requested operation.
    #[error("length error: {0}")]
    Length(String),

    /// Optimizer or parameter state is inconsistent.
    #[error("state error: {0}")]
    State(String),

    /// A computation produced NaN/Inf or otherwise diverged.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CoreError {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Dim {
            op,
            detail: detail.into(),
        }
    }
}

//! CLI-side error type with process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Error, Debug)]
pub enum CliError {
    /// Bad configuration or arguments; every problem is listed.
    #[error("validation error:\n{0}")]
    Validation(String),

    /// Numeric or runtime failure inside the core.
    #[error(transparent)]
    Core(#[from] avasr_core::CoreError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but does not parse as the expected format.
    #[error("format error: {0}")]
    Format(String),
}

impl CliError {
    /// 0 success, 1 validation, 2 runtime/numeric, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Core(avasr_core::CoreError::Config(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Io(_) | CliError::Format(_) => 3,
        }
    }
}

use tabpower_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ACCURACY: i32 = 3;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::Accuracy(_)) => EXIT_ACCURACY,
            CliError::Usage(_) | CliError::Core(_) | CliError::Json(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

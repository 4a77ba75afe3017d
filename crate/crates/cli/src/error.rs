use thiserror::Error;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input: config, panel, matrix or flags.
    #[error("input error: {0}")]
    Input(String),
    /// Estimation, completion or study failure.
    #[error("estimation error: {0}")]
    Estimation(String),
    /// Repair or PSD failure.
    #[error("repair error: {0}")]
    Repair(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Repair(_) => 4,
            CliError::Output(_) => 1,
        }
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }

    pub fn estimation(e: impl std::fmt::Display) -> Self {
        CliError::Estimation(e.to_string())
    }

    pub fn repair(e: impl std::fmt::Display) -> Self {
        CliError::Repair(e.to_string())
    }

    pub fn output(e: impl std::fmt::Display) -> Self {
        CliError::Output(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

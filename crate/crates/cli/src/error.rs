use thiserror::Error;

/// A command failure together with its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn usage(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("{context}: {err}"))
    }

    pub fn data(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }

    /// Numerical core errors map to exit code 3, all others to 2.
    pub fn from_core(context: &str, err: lflctr_core::Error) -> Self {
        if err.is_numerical() {
            CliError::Numerical(format!("{context}: {err}"))
        } else {
            CliError::Data(format!("{context}: {err}"))
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

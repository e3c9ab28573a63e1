use std::path::PathBuf;

use nuclear_readout::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Problems with the inputs map to exit code 2, numerical failures to 3.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter { .. }
            | CoreError::UnknownLabel(_)
            | CoreError::Syntax { .. }
            | CoreError::InvalidProtocol(_)
            | CoreError::ModeMismatch(_)
            | CoreError::Unsupported(_) => CliError::Config(e.to_string()),
            CoreError::StepTooLarge { .. }
            | CoreError::NoConvergence { .. }
            | CoreError::FitResidual { .. }
            | CoreError::EmptySelection { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use chibar_core::ChibarError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(ChibarError),
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Usage(_) => ExitCode::from(2),
            Self::Numeric(_) | Self::Io(_) => ExitCode::from(1),
        }
    }
}

impl From<ChibarError> for CliError {
    /// Errors caused by the request itself are usage errors; the rest are
    /// numerical failures.
    fn from(e: ChibarError) -> Self {
        match e {
            ChibarError::InvalidPartition(_)
            | ChibarError::InvalidInput(_)
            | ChibarError::DimensionTooLarge { .. }
            | ChibarError::NegativeCorrelation { .. } => Self::Usage(e.to_string()),
            _ => Self::Numeric(e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "usage error: {msg}"),
            Self::Numeric(e) => write!(f, "numerical failure: {e}"),
            Self::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

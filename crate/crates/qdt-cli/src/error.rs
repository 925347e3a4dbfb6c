use std::fmt;
use std::path::Path;

/// Command failures carrying their process exit code: 1 for verification
/// failures, 2 for usage and IO problems, 3 for numeric aborts.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Check(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: impl AsRef<Path>, err: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {err}", path.as_ref().display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m)
            | CliError::Io(m)
            | CliError::Check(m)
            | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<qdt::Error> for CliError {
    fn from(e: qdt::Error) -> CliError {
        match e {
            qdt::Error::NumericAbort { .. } => CliError::Numeric(e.to_string()),
            qdt::Error::Grad(gradcore::GradError::NonFinite { .. }) => {
                CliError::Numeric(e.to_string())
            }
            qdt::Error::Contract(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

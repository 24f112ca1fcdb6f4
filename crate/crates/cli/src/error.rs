use std::fmt;

use attncert::ErrorKind;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or paths; exit code 1.
    Usage(String),
    /// Unreadable, stale or inconsistent files; exit code 2.
    Data(String),
    Core(attncert::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::InvalidInput => 1,
                ErrorKind::Data => 2,
                ErrorKind::Internal => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<attncert::Error> for CliError {
    fn from(e: attncert::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

use std::fmt;

use wrht_core::WrhtError;

/// Failure of a command, carrying its exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or unreadable input, bad configuration: exit code 2.
    Io(String),
    /// The numerical core rejected the input: exit code 1, except for parse
    /// failures and singular covariances, which are reported as input errors.
    Math(WrhtError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Math(WrhtError::Parse(_) | WrhtError::SingularCovariance) => 2,
            CliError::Math(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(msg) => f.write_str(msg),
            CliError::Math(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<WrhtError> for CliError {
    fn from(e: WrhtError) -> Self {
        CliError::Math(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

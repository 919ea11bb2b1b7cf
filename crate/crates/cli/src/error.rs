use std::fmt;

use harmony_core::Error;

/// Exit code 1: the inputs were acceptable but the run failed.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit code 2: bad arguments, configuration or input files.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(message.into())
    }

    /// Prefixes the message with the file it came from.
    pub fn in_file(self, path: &std::path::Path) -> Self {
        let at = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Usage(m) => CliError::Usage(at(m)),
            CliError::Runtime(m) => CliError::Runtime(at(m)),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Solver(_) | Error::Contract(_) | Error::StaleState(_) | Error::Capacity { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::fmt;
use std::path::Path;

use lible_core::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ABORT: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn output(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            code: EXIT_OTHER,
            message: format!("cannot write {}: {err}", path.display()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::UnknownStrategy { .. } => EXIT_USAGE,
            Error::Parse { .. } | Error::Data(_) | Error::Csv(_) | Error::Shape { .. } | Error::Io(_) => EXIT_DATA,
            Error::TrainingAborted { .. } | Error::NonFinite { .. } => EXIT_ABORT,
            _ => EXIT_OTHER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

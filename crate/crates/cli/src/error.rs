use std::path::PathBuf;
use std::process::ExitCode;

use psbart::{ErrorCategory, PsbartError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },

    #[error(transparent)]
    Engine(#[from] PsbartError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: impl Into<String>, message: impl ToString) -> Self {
        CliError::Format {
            what: what.into(),
            message: message.to_string(),
        }
    }

    fn category(&self) -> ErrorCategory {
        match self {
            CliError::Usage(_) => ErrorCategory::Usage,
            CliError::Integrity(_) | CliError::Io { .. } | CliError::Format { .. } => {
                ErrorCategory::Data
            }
            CliError::Engine(e) => e.category(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Integrity(_) => "integrity",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Engine(e) => e.kind(),
        }
    }

    /// Prints the error as one JSON object on stderr and maps it to the
    /// process exit code.
    pub fn report(&self) -> ExitCode {
        let (category, code) = match self.category() {
            ErrorCategory::Usage => ("usage", 2),
            ErrorCategory::Data => ("data", 3),
            ErrorCategory::Numerical => ("numerical", 4),
        };
        let body = serde_json::json!({
            "error": self.kind(),
            "category": category,
            "message": self.to_string(),
        });
        eprintln!("{body}");
        ExitCode::from(code)
    }
}

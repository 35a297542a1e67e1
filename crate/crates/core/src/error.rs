use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum PsbartError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("invalid coarsening width {0}; must be positive")]
    InvalidWidth(f64),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("ill-conditioned kernel: {0}")]
    IllConditioned(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("MCMC iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<PsbartError>,
    },

    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<PsbartError>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

impl PsbartError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            PsbartError::Schema(_)
            | PsbartError::Parse { .. }
            | PsbartError::Mesh(_)
            | PsbartError::Layout(_)
            | PsbartError::Io { .. } => ErrorCategory::Data,
            PsbartError::DegenerateScale(_) | PsbartError::IllConditioned(_) => {
                ErrorCategory::Numerical
            }
            PsbartError::InvalidWidth(_)
            | PsbartError::InvalidInput(_)
            | PsbartError::Config(_) => ErrorCategory::Usage,
            PsbartError::Iteration { source, .. } | PsbartError::Replicate { source, .. } => {
                match source.category() {
                    ErrorCategory::Usage => ErrorCategory::Numerical,
                    other => other,
                }
            }
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            PsbartError::Schema(_) => "schema",
            PsbartError::Parse { .. } => "parse",
            PsbartError::Mesh(_) => "mesh",
            PsbartError::InvalidWidth(_) => "invalid_width",
            PsbartError::DegenerateScale(_) => "degenerate_scale",
            PsbartError::IllConditioned(_) => "ill_conditioned",
            PsbartError::InvalidInput(_) => "invalid_input",
            PsbartError::Layout(_) => "layout",
            PsbartError::Iteration { .. } => "iteration",
            PsbartError::Replicate { .. } => "replicate",
            PsbartError::Io { .. } => "io",
            PsbartError::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PsbartError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, PsbartError>;

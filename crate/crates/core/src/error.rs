use thiserror::Error;

/// Errors raised by the solver and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("kernel matrix is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("kernel not surjective (smallest eigenvalue {min_eigenvalue:.3e}); increase gamma")]
    NotSurjective { min_eigenvalue: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported term for this backend: {0}")]
    UnsupportedTerm(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Precondition or domain violation in caller-supplied input.
    #[error("input error: {0}")]
    Input(String),

    /// Requested problem exceeds an enumeration or evaluation budget.
    #[error("size error: {0}")]
    Size(String),

    /// A non-finite value or failed numerical routine.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A series or tail bound failed to converge.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Increment covariance is indefinite beyond tolerance.
    #[error("covariance is indefinite: smallest eigenvalue {lambda_min:e}")]
    Indefinite { lambda_min: f64 },

    #[error("operation not supported for the {0} covariance variant")]
    UnsupportedVariant(&'static str),

    /// Two inputs that must describe the same experiment do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn size(msg: impl Into<String>) -> Self {
        Error::Size(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the CLI: 2 for input problems, 3 for
    /// numerical or convergence failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_)
            | Error::Size(_)
            | Error::Parse { .. }
            | Error::Consistency(_)
            | Error::UnsupportedVariant(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Numeric(_) | Error::Convergence(_) | Error::Indefinite { .. } => 3,
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration. `line` is 1-based when the error comes from a config file.
    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical instability detected at time step {step}")]
    Instability { step: usize },

    #[error("parameter {index} is unidentifiable (zero diagonal Hessian entry)")]
    Unidentifiable { index: usize },

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("state error: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config { line: None, message: message.into() }
    }

    pub(crate) fn config_at(line: usize, message: impl Into<String>) -> Self {
        Error::Config { line: Some(line), message: message.into() }
    }

    /// Process exit code used by the command line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            _ => 3,
        }
    }
}

use thiserror::Error;

/// Failure of a run, classified by exit code.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("numerical guard at `{path}`: {message}")]
    Numerical { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config { .. } => 2,
            RunError::Numerical { .. } => 3,
            RunError::Io(_) => 1,
        }
    }

    pub fn guard(path: &str, message: impl Into<String>) -> Self {
        RunError::Numerical { path: path.into(), message: message.into() }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Attaches the config section responsible for a core failure.
pub trait Context<T> {
    fn at(self, path: &str) -> Result<T, RunError>;
}

impl<T> Context<T> for fermimf_core::Result<T> {
    fn at(self, path: &str) -> Result<T, RunError> {
        self.map_err(|e| {
            use fermimf_core::Error;
            match e {
                Error::Io(io) => RunError::Io(io.to_string()),
                Error::Format(m) => RunError::Io(m),
                e if e.is_numerical() => RunError::Numerical { path: path.into(), message: e.to_string() },
                e => RunError::Config { path: path.into(), message: e.to_string() },
            }
        })
    }
}

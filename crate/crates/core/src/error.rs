use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("duplicate observation for gene `{gene}`, experiment `{experiment}`, time {time} (line {line})")]
    DuplicateObservation {
        gene: String,
        experiment: String,
        time: f64,
        line: usize,
    },

    #[error("times of experiment `{experiment}` are not strictly increasing at index {index}")]
    NonIncreasingTimes { experiment: String, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite log-posterior: {0}")]
    NonFinite(String),

    #[error("empty trace")]
    EmptyTrace,
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed input or arguments rather than by
    /// a failure while computing.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFinite(_) | Error::EmptyTrace
        )
    }
}

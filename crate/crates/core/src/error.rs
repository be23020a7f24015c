use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("HTTP {status} from {url}")]
    HttpStatus { status: u16, url: String },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("embedding provider failed on batch {batch}: {message}")]
    Provider { batch: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed for event `{event}`: {source}")]
    Stage {
        stage: String,
        event: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: &str, event: &str, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            event: event.to_string(),
            source: Box::new(source),
        }
    }
}

use thiserror::Error;

/// Errors produced anywhere in the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A training loop produced a non-finite loss.
    #[error("{what} diverged at {unit} {index}: {detail}")]
    Divergence {
        what: String,
        unit: &'static str,
        index: usize,
        detail: String,
    },

    #[error("unknown environment `{id}`; valid ids: {valid}")]
    NotFound { id: String, valid: String },

    /// Malformed file content. `record` is 0-based over data records; the header is record `None`.
    #[error("parse error in {}: {detail}", match .record { Some(i) => format!("record {i}"), None => "header".to_string() })]
    Parse { record: Option<usize>, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// A pipeline stage failed; carries the stage name for diagnostics.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("graph integrity: {0}")]
    Integrity(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("no in-distribution nodes carry any of the requested classes")]
    EmptyId,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("llm backend failed after {attempts} attempt(s): {message}")]
    BackendFailure { attempts: usize, message: String },

    #[error("unparseable llm response: {0}")]
    ResponseParse(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("stage `{stage}` requires the `{required}` artifact ({path}); run `{required}` first")]
    Dependency {
        stage: String,
        required: String,
        path: PathBuf,
    },

    #[error("artifact {path} does not match its manifest hash")]
    Tampered { path: PathBuf },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` failed")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for this error class; distinct per class, never 0.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::EmptyId => 2,
            Error::Parse { .. } | Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 3,
            Error::Checkpoint(_) => 3,
            Error::Integrity(_) | Error::Tampered { .. } => 4,
            Error::Dependency { .. } => 5,
            Error::BackendFailure { .. } | Error::ResponseParse(_) => 6,
            Error::NonFinite(_) | Error::Shape(_) => 7,
            Error::UndefinedMetric(_) => 8,
            Error::Stage { .. } => 1,
        }
    }
}

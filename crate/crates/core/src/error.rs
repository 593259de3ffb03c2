use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes used by the command-line front end.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const DATA: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("empty document")]
    EmptyDocument,

    #[error("empty token list")]
    EmptyTokens,

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("cannot balance single-class data")]
    SingleClass,

    #[error("class count must be positive (relevant={relevant}, irrelevant={irrelevant})")]
    ZeroClassCount { relevant: usize, irrelevant: usize },

    #[error("length mismatch: {left} predictions vs {right} gold labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("nothing to evaluate")]
    EmptyEvaluation,

    #[error("missing gold labels: {0}")]
    MissingGold(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("stage order violated: {0}")]
    StageOrder(String),

    #[error("model/input mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training diverged during {stage} (epoch {epoch}): loss {loss} vs initial {initial}")]
    Divergence {
        stage: String,
        epoch: usize,
        loss: f64,
        initial: f64,
    },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Stable exit code: 1 validation, 2 data, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InFile { source, .. } => source.exit_code(),
            Error::InvalidConfig(_) | Error::Validation(_) | Error::StageOrder(_) => exit_code::VALIDATION,
            Error::Divergence { .. } => exit_code::DIVERGENCE,
            _ => exit_code::DATA,
        }
    }
}

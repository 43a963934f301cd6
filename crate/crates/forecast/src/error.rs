use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] diffcore::Error),
    #[error(transparent)]
    Sim(#[from] simkit::SimError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("environment {env}: every anchor needs a positive and a negative, missing {missing}")]
    ContrastiveBatch { env: usize, missing: &'static str },
    #[error("training diverged at epoch {epoch} of {stage}")]
    Diverged { stage: String, epoch: usize },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Json(_) => 2,
            Error::Sim(simkit::SimError::InvalidConfig(_) | simkit::SimError::InvalidStyle(_)) => 2,
            Error::MissingArtifact(_) | Error::Io { .. } | Error::Csv(_) => 3,
            Error::Sim(simkit::SimError::Io { .. } | simkit::SimError::Parse { .. }) => 3,
            Error::Diverged { .. } | Error::Diff(diffcore::Error::NonFinite { .. }) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

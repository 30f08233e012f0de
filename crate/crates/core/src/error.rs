use std::path::PathBuf;

/// Errors produced by the adars library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty group")]
    EmptyGroup,

    #[error("group has {0} rollouts; at least 2 are required")]
    GroupTooSmall(usize),

    #[error("mixed context ids in one group: {first:?} and {other:?}")]
    MixedContexts { first: String, other: String },

    #[error("rollout {index} in context {context_id:?} has neither a gold call nor a correctness label")]
    UnresolvedCorrectness { context_id: String, index: usize },

    #[error("reward gap {gap} exceeds the maximal gap {delta_max}")]
    GapExceedsMax { gap: f64, delta_max: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid response: {0}")]
    InvalidResponse(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no preference pairs were accepted; try a larger beta_rs")]
    NoAcceptedPairs,

    #[error("{path}: {source}")]
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

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

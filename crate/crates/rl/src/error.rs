use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stale tape: recorded at parameter version {recorded}, network is at {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("update schedule violated: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("replay buffer holds {size} transitions, batch needs {batch}")]
    BufferTooSmall { size: usize, batch: usize },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] sigfuse_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient history: need {needed} observations, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("cross-section needs at least 2 assets, got {0}")]
    DegenerateCrossSection(usize),

    #[error("cannot form {buckets} buckets from {assets} assets")]
    TooFewAssets { assets: usize, buckets: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("portfolio construction failed: {0}")]
    PortfolioConstruction(String),

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular design matrix: column `{column}` is linearly dependent on earlier columns")]
    SingularDesign { column: String },

    #[error("invalid action: {0}")]
    Action(String),

    #[error("episode bounds: {0}")]
    EpisodeBounds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid date {date}: {reason}")]
    Date { date: NaiveDate, reason: String },
}

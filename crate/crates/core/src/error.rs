use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),

    #[error("non-finite gradient or hessian at round {round}, observation {observation}")]
    NonFiniteGradient { round: usize, observation: usize },

    #[error("treatment arm {arm:+} is empty")]
    EmptyArm { arm: i8 },

    #[error("fold {fold} leaves treatment arm {arm:+} empty in its training split")]
    FoldEmptiesArm { fold: usize, arm: i8 },

    #[error("singular normal equations (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("lasso did not converge in {sweeps} sweeps (last max change {gap:e})")]
    LassoNotConverged { sweeps: usize, gap: f64 },

    #[error("no policy decision matches the received treatment (0 matches)")]
    NoMatches,

    #[error("scenario {scenario} needs at least {needed} covariates, got {got}")]
    ScenarioDimension { scenario: u8, needed: usize, got: usize },

    #[error("every tuning candidate failed: {0}")]
    AllCandidatesFailed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

use crate::trees::Bipartition;

#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("unknown model `{0}` (expected one of GMM, SSM, K81, K80, JC69)")]
    UnknownModel(String),

    #[error("splits {0} and {1} are incompatible")]
    IncompatibleSplits(Bipartition, Bipartition),

    #[error("expected {expected} interior splits, found {found}")]
    SplitCount { expected: usize, found: usize },

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

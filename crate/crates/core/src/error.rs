use thiserror::Error;

use crate::data::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains non-finite entries")]
    NonFinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}); the pPCA correspondence needs an invertible gram matrix")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("direction collapsed by regularization: sigma_{index}^2 = {sigma2} <= lambda = {lambda}")]
    Collapsed { index: usize, sigma2: f64, lambda: f64 },

    #[error("degenerate lambda: lambda = {lambda} coincides with sigma_{index}^2 = {sigma2}")]
    DegenerateLambda { index: usize, sigma2: f64, lambda: f64 },

    #[error("repeated singular values at positions {first} and {second}; the spectrum must be simple")]
    RepeatedSpectrum { first: usize, second: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("not a sum-loss decoder: singular value {value} of component {index} is >= 1")]
    NotSumDecoder { index: usize, value: f64 },

    #[error("product matrix has rank {rank}, need full rank {k}")]
    RankDeficient { rank: usize, k: usize },

    #[error(transparent)]
    Idx(#[from] IdxError),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

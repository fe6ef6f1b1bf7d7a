use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field has no unmasked cells")]
    EmptyDomain,

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix rank {rank} is below the requested {requested} components")]
    RankDeficient { rank: usize, requested: usize },

    #[error(
        "concatenated basis is numerically collinear (scaled condition number {condition:.3e}); \
         offending columns: {columns:?}"
    )]
    CollinearBasis { condition: f64, columns: Vec<usize> },

    #[error("covariance matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("emulator covariance is singular for component {component}; try a larger nugget")]
    SingularCovariance { component: usize },

    #[error(
        "hyperparameter optimisation failed after {restarts} restarts \
         (best log-likelihood {best_loglik}, best parameters {best_params:?}): {reason}"
    )]
    Optimization {
        restarts: usize,
        best_loglik: f64,
        best_params: Vec<f64>,
        reason: String,
    },

    #[error("sampler block `{block}` accepted no proposals during the first {window} iterations; rescale its proposal")]
    NoAcceptance { block: String, window: usize },

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("no ensemble run at parameter setting {0:?}")]
    MissingRun(Vec<f64>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::CollinearBasis { .. }
                | Error::NotPositiveDefinite(_)
                | Error::SingularCovariance { .. }
                | Error::Optimization { .. }
                | Error::NoAcceptance { .. }
        )
    }
}

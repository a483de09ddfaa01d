use thiserror::Error;

use crate::equilibrium::EquilibriumReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("price of MRP {index} is not strictly positive ({price})")]
    NonPositivePrice { index: usize, price: f64 },

    #[error("demand b[{msp}][{mrp}] is not a follower best response (residual {residual:e})")]
    NotAtFollowerBestResponse { msp: usize, mrp: usize, residual: f64 },

    #[error("follower best-response iteration did not converge after {iters} iterations (residual {residual:e})")]
    FollowerNoConvergence {
        iters: usize,
        residual: f64,
        last: Vec<Vec<f64>>,
    },

    #[error("ADMM did not converge after {iters} outer iterations (stop statistic {stop_stat:e})")]
    AdmmNoConvergence {
        iters: usize,
        stop_stat: f64,
        report: Box<EquilibriumReport>,
    },

    #[error("invalid scenario spec field `{field}`: {reason}")]
    SpecInvalid { field: String, reason: String },

    #[error("invalid configuration `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("episode finished; reset before stepping again")]
    EpisodeFinished,

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn spec(field: &str, reason: impl Into<String>) -> Self {
        Error::SpecInvalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

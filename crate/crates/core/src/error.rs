use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("functional table is not total: {0}")]
    MissingEntry(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("problem failed validation:\n{0}")]
    InvalidProblem(ValidationReport),

    #[error("{what}: size {size} exceeds cap {cap}")]
    SizeOverflow { what: String, size: u128, cap: u128 },

    #[error("observed message has probability {mass:e} under the current belief")]
    ZeroProbabilityObservation { mass: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{what}: count {count} exceeds cap {cap}")]
    Infeasible { what: String, count: u128, cap: u128 },

    #[error("episode {episode}: no entry for the realized information at step {t}")]
    UnreachableInformation { episode: u64, t: usize },
}

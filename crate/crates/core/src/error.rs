use std::path::PathBuf;

use crate::optim::EquilibriumResult;

/// Errors produced by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{name} = {value} is outside the domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("need at least 2 validators, got {0}")]
    TooFewValidators(u32),

    #[error("block capacity must be at least 1")]
    ZeroCapacity,

    #[error("invalid transaction pool: {0}")]
    InvalidPool(String),

    #[error("invalid fee distribution: {0}")]
    InvalidZipf(String),

    #[error("marginal q[{index}] = {value} is outside [0, 1]")]
    BoundViolation { index: usize, value: f64 },

    #[error("marginals sum to {sum}, expected block capacity {expected}")]
    SumMismatch { sum: f64, expected: f64 },

    #[error("strategy has {got} entries but the pool has {expected} transactions")]
    LengthMismatch { got: usize, expected: usize },

    #[error("block capacity {capacity} exceeds the {available} transactions that can be covered")]
    InfeasibleCapacity { capacity: f64, available: f64 },

    #[error("solver stopped after {} iterations without converging (kkt residual {})", .0.iterations, .0.kkt_residual)]
    NotConverged(Box<EquilibriumResult>),

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            domain: "[0, 1]",
        })
    }
}

use thiserror::Error;

/// Errors raised across the simulation and estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("transition {transition} is not dispersive: |delta|/g = {ratio:.3} < {threshold}")]
    NotDispersive {
        transition: usize,
        ratio: f64,
        threshold: f64,
    },

    #[error("dispersive sweep rejected {} grid point(s): {points:?}", points.len())]
    SweepRejected { points: Vec<f64> },

    #[error("steady-state photon number {photons:.3} exceeds critical photon number {n_crit:.3}")]
    PhotonNumber { photons: f64, n_crit: f64 },

    #[error("integration failed at t = {time_ns} ns: {reason}")]
    Integration { time_ns: f64, reason: String },

    #[error("inconsistent decoherence: pure dephasing rate of level {level} is {rate:.3e} /ns")]
    NegativeDephasing { level: usize, rate: f64 },

    #[error("rank-deficient design matrix (rank {rank}, condition number {condition:.3e})")]
    RankDeficient { rank: usize, condition: f64 },

    #[error("traces do not share a time grid: {0}")]
    GridMismatch(String),

    #[error("optimizer did not converge after {iterations} iterations (best cost {cost:.6e})")]
    NotConverged {
        iterations: usize,
        cost: f64,
        best: Vec<f64>,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

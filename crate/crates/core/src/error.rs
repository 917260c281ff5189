use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid volatility band: {0}")]
    InvalidBand(String),

    #[error("invalid sign process: {0}")]
    InvalidSignProcess(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("time {0} is not a knot of the grid")]
    NotOnGrid(f64),

    #[error("grid is not aligned with breakpoint {0}")]
    UnalignedGrid(f64),

    #[error("CFL violated at step {step}: dt = {dt:.3e} exceeds limit {limit:.3e}")]
    CflViolated { step: usize, dt: f64, limit: f64 },

    #[error("invalid state specification: {0}")]
    InvalidStateSpec(String),

    #[error("sigma_levels must be at least 2, got {0}")]
    SigmaLevels(usize),

    #[error("policy output {value} at t = {t} outside volatility band [{lo}, {hi}]")]
    PolicyOutOfBand { t: f64, value: f64, lo: f64, hi: f64 },

    #[error("variance rate {x} outside effective band [{lo}, {hi}]")]
    OutsideEffectiveBand { x: f64, lo: f64, hi: f64 },

    #[error("mismatched partitions: {0}")]
    MismatchedPartition(String),

    #[error("unsupported integrand: {0}")]
    UnsupportedIntegrand(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("policy list is empty")]
    EmptyPolicyList,

    #[error("invalid re-parameterization input: {0}")]
    InvalidReparam(String),

    #[error("margin {eps} outside (0, {cap})")]
    MarginOutOfRange { eps: f64, cap: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

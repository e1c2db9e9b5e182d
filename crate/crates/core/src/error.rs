//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by graph construction, gossip, learners, protocols and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("could not produce a connected graph after {attempts} attempts")]
    Unconnectable { attempts: usize },

    #[error("bad topology parameters: {0}")]
    BadParams(String),

    #[error("degenerate gossip matrix: second singular value {sigma2} is not below 1")]
    Degenerate { sigma2: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("simplex solver did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("protocol order violated: {0}")]
    OutOfOrder(String),

    #[error("feedback for block {0} was already delivered")]
    DuplicateFeedback(usize),

    #[error("the small-loss schedule needs L*")]
    MissingLStar,

    #[error("exploration floor violated: probability {prob:e} below {floor:e} for arm {arm}")]
    FloorViolation { arm: usize, prob: f64, floor: f64 },

    #[error("action set is rank deficient: {0}")]
    RankDeficient(String),

    #[error("no certified spanner within size cap {cap} (best size {found})")]
    SizeCapExceeded { cap: usize, found: usize },

    #[error("exploration rates too large: alpha + beta = {0} >= 1")]
    RatesTooLarge(f64),

    #[error("correlation matrix is not positive definite")]
    NotSpd,

    #[error("estimate bound violated: |value| = {value:e} exceeds {bound:e}")]
    BoundViolation { value: f64, bound: f64 },

    #[error("invalid environment spec: {0}")]
    BadSpec(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_)
            | Error::Parse(_)
            | Error::BadParams(_)
            | Error::BadSpec(_)
            | Error::MissingLStar
            | Error::Io(_) => 1,
            _ => 2,
        }
    }
}

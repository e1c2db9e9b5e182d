//! Full-information learners used by the agents: FTRL over the simplex with
//! entropy-based potentials, and the two-instance wrapper for delayed feedback.

mod delayed;
mod ftrl;
mod regularizer;
pub mod solver;

pub use delayed::DelayedWrapper;
pub use ftrl::FtrlState;
pub use regularizer::{tune_rates, Potential, Regularizer, TsallisSchedule, Tuning};
pub use solver::{kkt_residual, objective, solve, solve_entropy, solve_simplex_hybrid, SimplexSolution};

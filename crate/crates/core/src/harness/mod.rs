//! Experiment harness: configs, the lockstep runner, regret accounting and outputs.
//!
//! [`run_experiment`] resolves the block length, mixing coefficient and rates
//! from a config, runs every replay, and checks per block that delivered
//! estimates are within the consensus bound and that the ghost learner (the
//! same FTRL fed exact network averages) stays within a constant factor of
//! every agent's policy.

pub mod config;
pub mod output;
pub mod regret;
pub mod runner;

pub use config::{ExperimentConfig, Variant};
pub use output::{run_and_write, sweep, write_experiment, write_run_csv, Summary, SweepPoint, CSV_HEADER};
pub use regret::{
    bobw_stochastic_bound, gap_regret, mean_se, pseudo_regret, theory_bound, BoundKind, PolicyTrace, RegretReport,
    RegretTrace, TheoryBound,
};
pub use runner::{prepare, run_experiment, run_prepared, run_replay, Experiment, Prepared, ResolvedParams, RunRecord};

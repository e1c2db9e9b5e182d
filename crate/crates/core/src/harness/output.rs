//! CSV telemetry and JSON summaries.
//!
//! Per-replay CSV, one row per block and agent (agents 0-based):
//!
//! ```text
//! block,agent,consensus_err,ghost_ratio,cum_loss
//! ```
//!
//! `consensus_err` is empty for block 1 and `ghost_ratio` is empty when the
//! ghost is off. `cum_loss` is `sum <p_t(i), lbar_t>` through the end of the block.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{parse_value, set_key, ExperimentConfig};
use super::regret::RegretReport;
use super::runner::{run_experiment, Experiment, ResolvedParams, RunRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "block,agent,consensus_err,ghost_ratio,cum_loss";

pub fn write_run_csv<W: Write>(run: &RunRecord, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in &run.rows {
        let cum = &run.regret.cum_loss[row.block - 1];
        for (i, c) in cum.iter().enumerate() {
            let e = row.consensus_err.get(i).map(|v| v.to_string()).unwrap_or_default();
            let g = row.ghost_ratio.get(i).map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{i},{e},{g},{c}", row.block)?;
        }
    }
    Ok(())
}

/// JSON summary of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub params: &'a ResolvedParams,
    pub regret: &'a RegretReport,
    pub master_seed: u64,
    pub num_seeds: usize,
    pub max_consensus_err: f64,
    pub max_reconstructed_err: Option<f64>,
    pub max_ghost_ratio: Option<f64>,
    pub max_abs_estimate: Option<f64>,
    pub messages_per_replay: Vec<u64>,
    pub floats_per_agent: Vec<u64>,
    pub violations: Vec<String>,
}

impl<'a> Summary<'a> {
    pub fn new(cfg: &ExperimentConfig, e: &'a Experiment) -> Self {
        Self {
            params: &e.params,
            regret: &e.report,
            master_seed: cfg.algorithm.master_seed,
            num_seeds: cfg.algorithm.num_seeds,
            max_consensus_err: e.max_consensus_err(),
            max_reconstructed_err: e.runs.iter().filter_map(|r| r.max_reconstructed_err).reduce(f64::max),
            max_ghost_ratio: e.max_ghost_ratio(),
            max_abs_estimate: e.runs.iter().filter_map(|r| r.max_abs_estimate).reduce(f64::max),
            messages_per_replay: e.runs.iter().map(|r| r.messages).collect(),
            floats_per_agent: e.runs.first().map(|r| r.floats_per_agent.clone()).unwrap_or_default(),
            violations: e
                .runs
                .iter()
                .flat_map(|r| r.violations.iter().map(move |v| format!("replay {}: {v}", r.replay)))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Name of the CSV for replay `r`.
pub fn run_csv_name(replay: u64) -> String {
    format!("run_{replay:04}.csv")
}

/// Writes the CSVs and the summary into `dir`. Returns the written paths.
pub fn write_experiment(cfg: &ExperimentConfig, e: &Experiment, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if cfg.output.csv {
        for run in &e.runs {
            let path = dir.join(run_csv_name(run.replay));
            let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_run_csv(run, file)?;
            written.push(path);
        }
    }
    let path = dir.join(&cfg.output.summary);
    std::fs::write(&path, Summary::new(cfg, e).to_json())?;
    written.push(path);
    Ok(written)
}

/// Runs a config and writes its outputs when `output.dir` is set.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<Experiment> {
    let e = run_experiment(cfg)?;
    if let Some(dir) = &cfg.output.dir {
        write_experiment(cfg, &e, dir)?;
    }
    Ok(e)
}

/// One point of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub horizon: usize,
    pub effective_horizon: usize,
    pub block_len: usize,
    pub reg_t: f64,
    pub reg_t_se: Option<f64>,
    pub reg_per_round: f64,
    pub bound: f64,
    pub bound_valid: bool,
    pub max_consensus_err: f64,
    pub max_ghost_ratio: Option<f64>,
    pub violations: usize,
}

/// Re-runs `base` with `key` set to each of `values`. Outputs go to
/// `<output.dir>/<key>=<value>/` and a `sweep.json` table when a directory is set.
pub fn sweep(base: &toml::Table, key: &str, values: &[String]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::ConfigInvalid("sweep needs at least one value".into()));
    }
    let base_cfg = ExperimentConfig::from_table(base.clone())?;
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let mut t = base.clone();
        set_key(&mut t, key, parse_value(v))?;
        let mut cfg = ExperimentConfig::from_table(t)?;
        cfg.output.dir = base_cfg.output.dir.as_ref().map(|d| d.join(format!("{key}={}", v.trim())));
        let e = run_and_write(&cfg)?;
        points.push(SweepPoint {
            value: v.trim().to_string(),
            horizon: e.params.horizon,
            effective_horizon: e.params.effective_horizon,
            block_len: e.params.block_len,
            reg_t: e.report.reg_t,
            reg_t_se: e.report.reg_t_se,
            reg_per_round: e.report.reg_t / e.params.effective_horizon as f64,
            bound: e.report.bound.value,
            bound_valid: e.report.bound_valid,
            max_consensus_err: e.max_consensus_err(),
            max_ghost_ratio: e.max_ghost_ratio(),
            violations: e.violations(),
        });
    }
    if let Some(dir) = &base_cfg.output.dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&points).expect("serializes"))?;
    }
    Ok(points)
}

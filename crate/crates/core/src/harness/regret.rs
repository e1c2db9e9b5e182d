//! Pseudo-regret and reference bounds.
//!
//! The regret of agent `i` over `T` rounds is
//!
//! ```text
//! Reg_T(i) = sum_t <p_t(i), lbar_t> - min_k sum_t lbar_t(k)
//! ```
//!
//! with `lbar_t` the network-average loss. The first term uses the played
//! distribution rather than the sampled arm. All logarithms are natural.

use serde::Serialize;

use super::config::Variant;
use crate::error::{Error, Result};

/// Per-block policies of every agent; the policy is constant inside a block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyTrace {
    block_len: usize,
    policies: Vec<Vec<Vec<f64>>>,
}

impl PolicyTrace {
    pub fn new(block_len: usize) -> Self {
        Self { block_len, policies: Vec::new() }
    }

    /// Appends the policies `p_tau(i)` of the next block, indexed by agent.
    pub fn push(&mut self, block: Vec<Vec<f64>>) {
        self.policies.push(block);
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn blocks(&self) -> usize {
        self.policies.len()
    }

    pub fn rounds(&self) -> usize {
        self.block_len * self.policies.len()
    }

    pub fn n_agents(&self) -> usize {
        self.policies.first().map_or(0, |b| b.len())
    }

    /// `p_tau(i)` for the 1-based block `tau`.
    pub fn policy(&self, tau: usize, agent: usize) -> &[f64] {
        &self.policies[tau - 1][agent]
    }
}

/// Cumulative losses and final regret of one replay.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    /// `cum_loss[tau - 1][i] = sum over rounds up to the end of block tau of <p_t(i), lbar_t>`.
    pub cum_loss: Vec<Vec<f64>>,
    pub best_arm: usize,
    pub best_loss: f64,
    pub per_agent: Vec<f64>,
}

impl RegretTrace {
    /// `max_i Reg_T(i)` for this replay.
    pub fn worst(&self) -> f64 {
        self.per_agent.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Regret of every agent from its policy trace and the `T x K` network-average losses.
pub fn pseudo_regret(trace: &PolicyTrace, global: &[Vec<f64>]) -> Result<RegretTrace> {
    if global.len() != trace.rounds() {
        return Err(Error::DimMismatch { expected: trace.rounds(), actual: global.len() });
    }
    let arms = global.first().map_or(0, |r| r.len());
    let n = trace.n_agents();
    let mut totals = vec![0.0; arms];
    let mut running = vec![0.0; n];
    let mut cum_loss = Vec::with_capacity(trace.blocks());
    for (b, rows) in global.chunks(trace.block_len.max(1)).enumerate() {
        let mut block_sum = vec![0.0; arms];
        for row in rows {
            if row.len() != arms {
                return Err(Error::DimMismatch { expected: arms, actual: row.len() });
            }
            for k in 0..arms {
                block_sum[k] += row[k];
            }
        }
        for (i, r) in running.iter_mut().enumerate() {
            let p = trace.policy(b + 1, i);
            *r += p.iter().zip(&block_sum).map(|(p, l)| p * l).sum::<f64>();
        }
        for k in 0..arms {
            totals[k] += block_sum[k];
        }
        cum_loss.push(running.clone());
    }
    let (best_arm, best_loss) =
        totals.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let per_agent = running.iter().map(|r| r - best_loss).collect();
    Ok(RegretTrace { cum_loss, best_arm, best_loss, per_agent })
}

/// Stochastic decomposition `sum_t <p_t(i), delta>` for gaps `delta`.
pub fn gap_regret(trace: &PolicyTrace, gaps: &[f64]) -> Vec<f64> {
    let b = trace.block_len as f64;
    (0..trace.n_agents())
        .map(|i| {
            (1..=trace.blocks())
                .map(|tau| b * trace.policy(tau, i).iter().zip(gaps).map(|(p, d)| p * d).sum::<f64>())
                .sum()
        })
        .collect()
}

/// Sample mean and standard error (`None` for a single sample).
pub fn mean_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// Explicit constants; the mean regret must not exceed it.
    Hard,
    /// Big-O expression with unit constants; for scale only.
    OrderLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryBound {
    pub value: f64,
    pub kind: BoundKind,
}

/// Regret bound for a variant.
///
/// - `worst_case`: `2 sqrt(2 ln K (B + 3K/N) T) + 10`.
/// - `small_loss`: `sqrt(B L* ln K) + sqrt(K L* ln T / N) + B ln K + K ln T / N` (`L* = T` if unknown).
/// - `bobw` (adversarial): `sqrt(B T ln K) + sqrt(K T / N) + B ln K`.
/// - `linear`: `sqrt(ln K (B + 1/N) d T) + d B ln K`.
pub fn theory_bound(
    variant: Variant,
    arms: usize,
    horizon: usize,
    n_agents: usize,
    block_len: usize,
    dim: usize,
    l_star: Option<f64>,
) -> TheoryBound {
    let (k, t, n, b, d) = (arms as f64, horizon as f64, n_agents as f64, block_len as f64, dim as f64);
    let lk = k.ln();
    match variant {
        Variant::WorstCase => {
            TheoryBound { value: 2.0 * (2.0 * lk * (b + 3.0 * k / n) * t).sqrt() + 10.0, kind: BoundKind::Hard }
        }
        Variant::SmallLoss => {
            let l = l_star.unwrap_or(t);
            TheoryBound {
                value: (b * l * lk).sqrt() + (k * l * t.ln() / n).sqrt() + b * lk + k * t.ln() / n,
                kind: BoundKind::OrderLevel,
            }
        }
        Variant::Bobw => {
            TheoryBound { value: (b * t * lk).sqrt() + (k * t / n).sqrt() + b * lk, kind: BoundKind::OrderLevel }
        }
        Variant::Linear => {
            TheoryBound { value: (lk * (b + 1.0 / n) * d * t).sqrt() + d * b * lk, kind: BoundKind::OrderLevel }
        }
    }
}

/// Gap-dependent order-level bound of `bobw` on a stochastic instance:
/// `(B/N) sum ln(T/B)/delta + sum B^2/(delta ln K) + B^2 ln K` over suboptimal arms.
pub fn bobw_stochastic_bound(block_len: usize, n_agents: usize, horizon: usize, gaps: &[f64]) -> f64 {
    let (b, n, t) = (block_len as f64, n_agents as f64, horizon as f64);
    let lk = (gaps.len() as f64).ln();
    let sub: Vec<f64> = gaps.iter().copied().filter(|&d| d > 0.0).collect();
    b / n * sub.iter().map(|d| (t / b).ln() / d).sum::<f64>()
        + sub.iter().map(|d| b * b / (d * lk)).sum::<f64>()
        + b * b * lk
}

/// Mean and standard error of one agent's regret over replays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentRegret {
    pub agent: usize,
    pub mean: f64,
    pub se: Option<f64>,
}

/// Regret summary over all replays of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub per_agent: Vec<AgentRegret>,
    /// `max_i` of the per-agent means.
    pub reg_t: f64,
    /// Standard error of the agent attaining `reg_t`.
    pub reg_t_se: Option<f64>,
    pub reg_t_agent: usize,
    /// `max_i Reg_T(i)` of every replay.
    pub per_replay: Vec<f64>,
    pub bound: TheoryBound,
    pub bound_valid: bool,
    /// `sum_t <p_t(i), delta>` on stochastic environments.
    pub gap_regret: Option<Vec<AgentRegret>>,
    pub stochastic_bound: Option<f64>,
    pub log_base: &'static str,
}

fn summarize(per_run: &[Vec<f64>]) -> Vec<AgentRegret> {
    let n = per_run.first().map_or(0, |r| r.len());
    (0..n)
        .map(|i| {
            let xs: Vec<f64> = per_run.iter().map(|r| r[i]).collect();
            let (mean, se) = mean_se(&xs);
            AgentRegret { agent: i, mean, se }
        })
        .collect()
}

impl RegretReport {
    /// Aggregates per-replay, per-agent regrets.
    pub fn from_runs(
        per_run: &[Vec<f64>],
        gap: Option<&[Vec<f64>]>,
        bound: TheoryBound,
        bound_valid: bool,
        stochastic_bound: Option<f64>,
    ) -> Self {
        let per_agent = summarize(per_run);
        let top = per_agent
            .iter()
            .copied()
            .fold(None::<AgentRegret>, |acc, a| match acc {
                Some(b) if b.mean >= a.mean => Some(b),
                _ => Some(a),
            })
            .unwrap_or(AgentRegret { agent: 0, mean: 0.0, se: None });
        Self {
            reg_t: top.mean,
            reg_t_se: top.se,
            reg_t_agent: top.agent,
            per_replay: per_run.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect(),
            per_agent,
            bound,
            bound_valid,
            gap_regret: gap.map(summarize),
            stochastic_bound,
            log_base: "natural",
        }
    }

    /// `reg_t + 2 se` (just `reg_t` for one replay).
    pub fn upper_estimate(&self) -> f64 {
        self.reg_t + 2.0 * self.reg_t_se.unwrap_or(0.0)
    }
}

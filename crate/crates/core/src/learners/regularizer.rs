use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block-indexed rates for the entropy + Tsallis potential:
/// `eta_t = min(eta_cap, eta_scale / sqrt t)`, `gamma_t = gamma_scale / sqrt t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsallisSchedule {
    pub eta_cap: f64,
    pub eta_scale: f64,
    pub gamma_scale: f64,
}

impl TsallisSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        self.eta_cap.min(self.eta_scale / (t.max(1) as f64).sqrt())
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma_scale / (t.max(1) as f64).sqrt()
    }
}

/// FTRL potential over the simplex together with its learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `(1/eta) sum q log q`
    NegEntropy { eta: f64 },
    /// `(1/eta) sum q log q - (1/gamma) sum log q`
    EntropyLogBarrier { eta: f64, gamma: f64 },
    /// `(1/eta_t) sum q log q - (2/gamma_t) sum sqrt q`
    EntropyTsallis { schedule: TsallisSchedule },
}

/// The potential frozen at one block index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    Entropy { eta: f64 },
    LogBarrier { eta: f64, gamma: f64 },
    Tsallis { eta: f64, gamma: f64 },
}

impl Potential {
    pub fn eta(&self) -> f64 {
        match *self {
            Potential::Entropy { eta } | Potential::LogBarrier { eta, .. } | Potential::Tsallis { eta, .. } => eta,
        }
    }

    /// Value of the potential at `q` (`+inf` outside the open simplex for the barriers).
    pub fn value(&self, q: &[f64]) -> f64 {
        let ent: f64 = q.iter().map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 }).sum();
        match *self {
            Potential::Entropy { eta } => ent / eta,
            Potential::LogBarrier { eta, gamma } => ent / eta - q.iter().map(|&x| x.ln()).sum::<f64>() / gamma,
            Potential::Tsallis { eta, gamma } => ent / eta - 2.0 * q.iter().map(|&x| x.sqrt()).sum::<f64>() / gamma,
        }
    }

    /// `x * psi''(x)`, the curvature of the potential in `ln x`.
    pub fn log_curvature(&self, x: f64) -> f64 {
        match *self {
            Potential::Entropy { eta } => 1.0 / eta,
            Potential::LogBarrier { eta, gamma } => 1.0 / eta + 1.0 / (gamma * x),
            Potential::Tsallis { eta, gamma } => 1.0 / eta + 0.5 / (gamma * x.sqrt()),
        }
    }

    /// Partial derivative of the potential in coordinate `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Potential::Entropy { eta } => (x.ln() + 1.0) / eta,
            Potential::LogBarrier { eta, gamma } => (x.ln() + 1.0) / eta - 1.0 / (gamma * x),
            Potential::Tsallis { eta, gamma } => (x.ln() + 1.0) / eta - 1.0 / (gamma * x.sqrt()),
        }
    }
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Regularizer::NegEntropy { eta } => eta > 0.0 && eta.is_finite(),
            Regularizer::EntropyLogBarrier { eta, gamma } => {
                eta > 0.0 && gamma > 0.0 && eta.is_finite() && gamma.is_finite()
            }
            Regularizer::EntropyTsallis { schedule } => {
                schedule.eta_cap > 0.0 && schedule.eta_scale > 0.0 && schedule.gamma_scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("learning rates must be positive: {self:?}")))
        }
    }

    /// Potential in force when playing global block `block` (1-based).
    pub fn at(&self, block: usize) -> Potential {
        match *self {
            Regularizer::NegEntropy { eta } => Potential::Entropy { eta },
            Regularizer::EntropyLogBarrier { eta, gamma } => Potential::LogBarrier { eta, gamma },
            Regularizer::EntropyTsallis { schedule } => {
                Potential::Tsallis { eta: schedule.eta(block), gamma: schedule.gamma(block) }
            }
        }
    }
}

/// Which guarantee the learning rates are tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    WorstCase,
    SmallLoss,
    Bobw,
}

/// Learning rates for `K` arms, horizon `T`, `N` agents and block length `B`.
///
/// Logarithms are natural. `l_star` is required for [`Tuning::SmallLoss`];
/// `L* = 0` makes the loss-dependent branches infinite so the caps apply.
pub fn tune_rates(
    tuning: Tuning,
    arms: usize,
    horizon: usize,
    n_agents: usize,
    block_len: usize,
    l_star: Option<f64>,
) -> Result<Regularizer> {
    let k = arms as f64;
    let t = horizon as f64;
    let n = n_agents as f64;
    let b = block_len.max(1) as f64;
    let reg = match tuning {
        Tuning::WorstCase => Regularizer::NegEntropy { eta: (k.ln() / (2.0 * (b + 3.0 * k / n) * t)).sqrt() },
        Tuning::SmallLoss => {
            let l = l_star.ok_or(Error::MissingLStar)?;
            if !(l >= 0.0) {
                return Err(Error::OutOfRange(format!("L* = {l} must be nonnegative")));
            }
            Regularizer::EntropyLogBarrier {
                eta: (1.0 / (4.0 * b)).min((k.ln() / (b * l)).sqrt()),
                gamma: (n / 12.0).min((k * n * t.ln() / l).sqrt()),
            }
        }
        Tuning::Bobw => Regularizer::EntropyTsallis {
            schedule: TsallisSchedule { eta_cap: 1.0 / b, eta_scale: k.ln().sqrt() / b, gamma_scale: (n / b).sqrt() },
        },
    };
    reg.validate()?;
    Ok(reg)
}

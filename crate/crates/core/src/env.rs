//! Oblivious loss generators.
//!
//! Each `(agent, arm)` cell of a `K`-armed tensor, and each agent of a linear
//! parameter sequence, draws from its own stream keyed by the environment
//! seed. Streams are consumed in round order with a fixed number of draws per
//! round, so a longer horizon extends a shorter one without changing it.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gossip::compensated_sum;
use crate::karmed::LossTensor;
use crate::linear::{ActionSet, ThetaSequence};
use crate::rng::{env_aux_stream, env_stream, unit_f64};

/// How a stochastic loss with mean `mu` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Draw {
    #[default]
    Bernoulli,
    /// `Beta(mu c, (1 - mu) c)` with concentration `c`.
    Beta { concentration: f64 },
}

impl Draw {
    fn sample(&self, mu: f64, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Draw::Bernoulli => {
                if unit_f64(rng) < mu {
                    1.0
                } else {
                    0.0
                }
            }
            Draw::Beta { concentration } => {
                if mu <= 0.0 || mu >= 1.0 {
                    return mu.clamp(0.0, 1.0);
                }
                Beta::new(mu * concentration, (1.0 - mu) * concentration).expect("validated parameters").sample(rng)
            }
        }
    }
}

/// Per-agent means `mu(i, k)` with a unique globally best arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSpec {
    pub means: Vec<Vec<f64>>,
    #[serde(default)]
    pub draw: Draw,
}

impl StochasticSpec {
    pub fn new(means: Vec<Vec<f64>>, draw: Draw) -> Result<Self> {
        let s = Self { means, draw };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if n == 0 {
            return Err(Error::BadSpec("no agents".into()));
        }
        let k = self.means[0].len();
        if k < 2 || self.means.iter().any(|r| r.len() != k) {
            return Err(Error::BadSpec("every agent needs the same K >= 2 means".into()));
        }
        if self.means.iter().flatten().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::BadSpec("means must lie in [0, 1]".into()));
        }
        if let Draw::Beta { concentration } = self.draw {
            if !(concentration > 0.0 && concentration.is_finite()) {
                return Err(Error::BadSpec(format!("beta concentration {concentration}")));
            }
        }
        let gaps = self.gaps();
        let best = self.best_arm();
        if gaps.iter().enumerate().any(|(k, &g)| k != best && !(g > 0.0)) {
            return Err(Error::BadSpec("the optimal arm is not unique".into()));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.means.len()
    }

    pub fn arms(&self) -> usize {
        self.means[0].len()
    }

    /// `mu(k) = (1/N) sum_i mu(i, k)`.
    pub fn global_means(&self) -> Vec<f64> {
        let n = self.means.len() as f64;
        (0..self.arms()).map(|k| self.means.iter().map(|r| r[k]).sum::<f64>() / n).collect()
    }

    /// `argmin_k mu(k)`, lowest index on ties.
    pub fn best_arm(&self) -> usize {
        argmin(&self.global_means())
    }

    /// `delta(k) = mu(k) - mu(k*)`.
    pub fn gaps(&self) -> Vec<f64> {
        let mu = self.global_means();
        let best = mu[argmin(&mu)];
        mu.iter().map(|m| m - best).collect()
    }
}

/// Homogeneous gap instance: `mu(k*) = 0.5 - delta/2` and `0.5 + delta/2` elsewhere.
pub fn gap_instance(delta: f64, k_star: usize, n_agents: usize, arms: usize) -> Result<StochasticSpec> {
    gap_instance_heterogeneous(delta, k_star, n_agents, arms, 0.0)
}

/// Gap instance whose agents are shifted in pairs by `+h` and `-h` on every arm,
/// keeping the global means of [`gap_instance`]. With odd `N` the last agent is unshifted.
pub fn gap_instance_heterogeneous(
    delta: f64,
    k_star: usize,
    n_agents: usize,
    arms: usize,
    h: f64,
) -> Result<StochasticSpec> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::BadSpec(format!("gap {delta} must lie in (0, 1]")));
    }
    if k_star >= arms {
        return Err(Error::BadSpec(format!("best arm {k_star} out of range")));
    }
    let means = (0..n_agents)
        .map(|i| {
            let shift = if n_agents % 2 == 1 && i == n_agents - 1 {
                0.0
            } else if i % 2 == 0 {
                h
            } else {
                -h
            };
            (0..arms).map(|k| if k == k_star { 0.5 - delta / 2.0 } else { 0.5 + delta / 2.0 } + shift).collect()
        })
        .collect();
    StochasticSpec::new(means, Draw::Bernoulli)
}

/// `K`-armed environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    /// Every entry uniform on `[0, 1]`.
    IidUniform,
    /// `segments` equal stretches of the horizon; in stretch `s` arm `s mod K` has mean
    /// `0.5 - gap/2` and the others `0.5 + gap/2`, plus uniform noise of half-width `noise`.
    PiecewiseShift { segments: usize, gap: f64, noise: f64 },
    /// Globally arm 0 is best by `gap`, but agent `i` locally prefers arm `i mod K` by
    /// about `bias`; the per-agent shifts cancel in the network average. Bernoulli draws.
    HeterogeneousBias { gap: f64, bias: f64 },
    /// Arm 0 draws Bernoulli(`eps`), the others uniform on `[0, 1]`.
    SmallLossRegime { eps: f64 },
    /// Same loss vector every round and agent.
    Constant { losses: Vec<f64> },
    /// [`gap_instance_heterogeneous`] with the given draw.
    Gap {
        delta: f64,
        #[serde(default)]
        best_arm: usize,
        #[serde(default)]
        heterogeneity: f64,
        #[serde(default)]
        draw: Draw,
    },
    /// Explicit per-agent means.
    Stochastic(StochasticSpec),
}

impl EnvSpec {
    /// The stochastic model behind this spec, if it is stochastic.
    pub fn stochastic(&self, n_agents: usize, arms: usize) -> Result<Option<StochasticSpec>> {
        match self {
            EnvSpec::Gap { delta, best_arm, heterogeneity, draw } => {
                let mut s = gap_instance_heterogeneous(*delta, *best_arm, n_agents, arms, *heterogeneity)?;
                s.draw = *draw;
                s.validate()?;
                Ok(Some(s))
            }
            EnvSpec::Stochastic(s) => {
                s.validate()?;
                if s.n_agents() != n_agents || s.arms() != arms {
                    return Err(Error::BadSpec(format!(
                        "means are {}x{}, expected {n_agents}x{arms}",
                        s.n_agents(),
                        s.arms()
                    )));
                }
                Ok(Some(s.clone()))
            }
            _ => Ok(None),
        }
    }

    pub fn validate(&self, n_agents: usize, arms: usize) -> Result<()> {
        match self {
            EnvSpec::IidUniform => {}
            EnvSpec::PiecewiseShift { segments, gap, noise } => {
                if *segments == 0 || !(0.0..=1.0).contains(gap) || !(0.0..=1.0).contains(noise) {
                    return Err(Error::BadSpec("piecewise_shift needs segments >= 1, gap and noise in [0, 1]".into()));
                }
            }
            EnvSpec::HeterogeneousBias { gap, bias } => {
                if !(0.0..=1.0).contains(gap) || !(*bias >= 0.0) || gap / 2.0 + bias > 0.5 {
                    return Err(Error::BadSpec("heterogeneous_bias needs gap/2 + bias <= 1/2".into()));
                }
            }
            EnvSpec::SmallLossRegime { eps } => {
                if !(0.0..=1.0).contains(eps) {
                    return Err(Error::BadSpec(format!("eps {eps} outside [0, 1]")));
                }
            }
            EnvSpec::Constant { losses } => {
                if losses.len() != arms || losses.iter().any(|l| !(0.0..=1.0).contains(l)) {
                    return Err(Error::BadSpec(format!("constant losses need {arms} values in [0, 1]")));
                }
            }
            EnvSpec::Gap { .. } | EnvSpec::Stochastic(_) => {
                self.stochastic(n_agents, arms)?;
            }
        }
        Ok(())
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (k, &x)| if x < v[best] { k } else { best })
}

/// Materializes `T x N x K` losses for `spec` from `env_seed`.
pub fn gen_kmab_losses(
    spec: &EnvSpec,
    env_seed: u64,
    horizon: usize,
    n_agents: usize,
    arms: usize,
) -> Result<LossTensor> {
    spec.validate(n_agents, arms)?;
    let (t_len, n, k) = (horizon, n_agents, arms);
    let mut values = vec![0.0; t_len * n * k];
    let stochastic = spec.stochastic(n, k)?;
    // column shifts for heterogeneous_bias: share of agents whose favourite is each arm
    let share: Vec<f64> = (0..k).map(|kk| (0..n).filter(|i| i % k == kk).count() as f64 / n as f64).collect();
    let seg_len = match spec {
        EnvSpec::PiecewiseShift { segments, .. } => t_len.div_ceil(*segments).max(1),
        _ => 1,
    };
    for i in 0..n {
        for kk in 0..k {
            let mut rng = env_stream(env_seed, (i * k + kk) as u64);
            for t in 0..t_len {
                let v = match spec {
                    EnvSpec::IidUniform => unit_f64(&mut rng),
                    EnvSpec::PiecewiseShift { gap, noise, .. } => {
                        let best = (t / seg_len) % k;
                        let mean = if kk == best { 0.5 - gap / 2.0 } else { 0.5 + gap / 2.0 };
                        (mean + noise * (2.0 * unit_f64(&mut rng) - 1.0)).clamp(0.0, 1.0)
                    }
                    EnvSpec::HeterogeneousBias { gap, bias } => {
                        let base = if kk == 0 { 0.5 - gap / 2.0 } else { 0.5 + gap / 2.0 };
                        let fav = if i % k == kk { 1.0 } else { 0.0 };
                        let mu = (base - bias * (fav - share[kk])).clamp(0.0, 1.0);
                        Draw::Bernoulli.sample(mu, &mut rng)
                    }
                    EnvSpec::SmallLossRegime { eps } => {
                        if kk == 0 {
                            Draw::Bernoulli.sample(*eps, &mut rng)
                        } else {
                            unit_f64(&mut rng)
                        }
                    }
                    EnvSpec::Constant { losses } => losses[kk],
                    EnvSpec::Gap { .. } | EnvSpec::Stochastic(_) => {
                        let s = stochastic.as_ref().expect("stochastic spec resolved");
                        s.draw.sample(s.means[i][kk], &mut rng)
                    }
                };
                values[(t * n + i) * k + kk] = v;
            }
        }
    }
    LossTensor::new(t_len, n, k, values)
}

/// `(k*, L*)` with `L* = min_k sum_t l_bar_t(k)`, lowest index on ties.
pub fn cumulative_best_arm(tensor: &LossTensor) -> (usize, f64) {
    let (t_len, n, k) = (tensor.horizon(), tensor.n_agents(), tensor.arms());
    let totals: Vec<f64> = (0..k)
        .map(|kk| {
            compensated_sum((0..t_len).flat_map(|t| (0..n).map(move |i| (t, i))).map(|(t, i)| tensor.get(t, i, kk)))
                / n as f64
        })
        .collect();
    let best = argmin(&totals);
    (best, totals[best])
}

/// Linear environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearEnvSpec {
    /// `theta_t(i) = signal u + noise g_t(i)` with a fixed unit direction `u`.
    IidGaussianNormalized { signal: f64, noise: f64 },
    /// `theta_t = scale (cos(2 pi t / period), sin(2 pi t / period), 0, ...)` for every agent.
    Rotating { period: usize, scale: f64 },
    /// `signal u + spread v_i + noise g_t(i)` with per-agent offsets `v_i` summing to zero.
    Heterogeneous { signal: f64, spread: f64, noise: f64 },
    /// Same parameter everywhere.
    Constant { theta: Vec<f64> },
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    g.into_iter().map(|x| x / norm).collect()
}

/// Generates `theta_t(i)` for `t < horizon`, rescaled per `(t, i)` so that every loss lies in `[-1, 1]`.
pub fn gen_linear_thetas(
    spec: &LinearEnvSpec,
    omega: &ActionSet,
    env_seed: u64,
    horizon: usize,
    n_agents: usize,
) -> Result<ThetaSequence> {
    let d = omega.ambient_dim();
    let (t_len, n) = (horizon, n_agents);
    let mut values = vec![0.0; t_len * n * d];
    let direction = unit_direction(&mut env_aux_stream(env_seed, 0), d);
    match spec {
        LinearEnvSpec::IidGaussianNormalized { signal, noise } | LinearEnvSpec::Heterogeneous { signal, noise, .. } => {
            if !(signal.is_finite() && noise.is_finite() && *noise >= 0.0) {
                return Err(Error::BadSpec("signal and noise must be finite, noise >= 0".into()));
            }
            let offsets: Vec<Vec<f64>> = match spec {
                LinearEnvSpec::Heterogeneous { spread, .. } => {
                    let raw: Vec<Vec<f64>> =
                        (0..n).map(|i| unit_direction(&mut env_aux_stream(env_seed, 1 + i as u64), d)).collect();
                    let mean: Vec<f64> = (0..d).map(|j| raw.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
                    raw.iter().map(|v| v.iter().zip(&mean).map(|(a, m)| spread * (a - m)).collect()).collect()
                }
                _ => vec![vec![0.0; d]; n],
            };
            for (i, off) in offsets.iter().enumerate() {
                let mut rng = env_stream(env_seed, i as u64);
                for t in 0..t_len {
                    let s = (t * n + i) * d;
                    for j in 0..d {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        values[s + j] = signal * direction[j] + off[j] + noise * g;
                    }
                }
            }
        }
        LinearEnvSpec::Rotating { period, scale } => {
            if *period == 0 || d < 2 || !scale.is_finite() {
                return Err(Error::BadSpec("rotating needs period >= 1 and d >= 2".into()));
            }
            for t in 0..t_len {
                let a = 2.0 * std::f64::consts::PI * t as f64 / *period as f64;
                for i in 0..n {
                    let s = (t * n + i) * d;
                    values[s] = scale * a.cos();
                    values[s + 1] = scale * a.sin();
                }
            }
        }
        LinearEnvSpec::Constant { theta } => {
            if theta.len() != d || theta.iter().any(|x| !x.is_finite()) {
                return Err(Error::BadSpec(format!("constant theta needs {d} finite values")));
            }
            for chunk in values.chunks_mut(d) {
                chunk.copy_from_slice(theta);
            }
        }
    }
    let mut normalization = vec![1.0; t_len * n];
    for (idx, chunk) in values.chunks_mut(d).enumerate() {
        let worst = (0..omega.arms()).map(|k| omega.loss(chunk, k).abs()).fold(0.0, f64::max);
        if worst > 1.0 {
            chunk.iter_mut().for_each(|x| *x /= worst);
            normalization[idx] = worst;
        }
    }
    ThetaSequence::new(t_len, n, d, values, normalization)
}

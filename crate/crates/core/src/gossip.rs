//! Accelerated gossip: mixing coefficient, block length and the two-term
//! consensus iteration
//!
//! ```text
//! x^{b+1}(i) = (1 + kappa) * sum_j W(i,j) x^b(j) - kappa * x^{b-1}(i)
//! ```
//!
//! started from `x^{-1} = x^0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GossipMatrix;

/// Contraction constant `1 - 1/sqrt(2)` of the accelerated iteration.
pub const DECAY_CONSTANT: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

/// Absolute floor for consensus assertions; bounds below this are under f64 roundoff.
pub const CONSENSUS_FLOOR: f64 = 1e-12;

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sigma2) {
        return Err(Error::OutOfRange(format!("sigma2 = {sigma2} must lie in [0, 1)")));
    }
    Ok(())
}

/// `kappa = 1 / (1 + sqrt(1 - sigma2^2))`.
pub fn mixing_coefficient(sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    Ok(1.0 / (1.0 + (1.0 - sigma2 * sigma2).sqrt()))
}

/// Block length and mixing coefficient used by both protocols.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GossipParams {
    pub kappa: f64,
    pub block_len: usize,
    pub sigma2: f64,
    /// Set when `block_len` came from a manual override instead of the formula.
    pub overridden: bool,
    /// Set when the block is longer than the horizon.
    pub exceeds_horizon: bool,
}

impl GossipParams {
    /// Standard (non-accelerated) gossip with a fixed block length.
    pub fn standard(block_len: usize) -> Self {
        Self { kappa: 0.0, block_len, sigma2: 0.0, overridden: true, exceeds_horizon: false }
    }
}

/// Unrounded block-length formula
/// `ln((KT)^6 sqrt(14 N)) / ((1 - 1/sqrt 2) sqrt(1 - sigma2))`.
pub fn block_length_real(arms: usize, horizon: usize, n_agents: usize, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let kt = arms as f64 * horizon as f64;
    let numerator = 6.0 * kt.ln() + 0.5 * (14.0 * n_agents as f64).ln();
    Ok(numerator / (DECAY_CONSTANT * (1.0 - sigma2).sqrt()))
}

/// Resolves `(kappa, B)` for `K` arms, horizon `T` and `N` agents.
pub fn block_length(
    arms: usize,
    horizon: usize,
    n_agents: usize,
    sigma2: f64,
    override_len: Option<usize>,
) -> Result<GossipParams> {
    check_sigma2(sigma2)?;
    if arms < 2 || horizon < 3 || n_agents < 1 {
        return Err(Error::OutOfRange(format!(
            "need K >= 2, T >= 3, N >= 1 (got K = {arms}, T = {horizon}, N = {n_agents})"
        )));
    }
    let kappa = mixing_coefficient(sigma2)?;
    let (block_len, overridden) = match override_len {
        Some(b) => (b, true),
        None => (block_length_real(arms, horizon, n_agents, sigma2)?.ceil() as usize, false),
    };
    Ok(GossipParams { kappa, block_len, sigma2, overridden, exceeds_horizon: block_len > horizon })
}

/// Frobenius-norm decay certificate `sqrt(14) (1 - (1 - 1/sqrt 2) sqrt(rho))^B`.
pub fn decay_factor(rho: f64, steps: usize) -> f64 {
    14f64.sqrt() * (1.0 - DECAY_CONSTANT * rho.sqrt()).powi(steps as i32)
}

/// Per-agent consensus bound `2B / (KT)^5` for the K-armed protocol.
pub fn karmed_consensus_bound(block_len: usize, arms: usize, horizon: usize) -> f64 {
    2.0 * block_len as f64 / (arms as f64 * horizon as f64).powi(5)
}

/// Consensus bound `2 / (T^2 K^3)` on spanner coordinates.
pub fn linear_consensus_bound(arms: usize, horizon: usize) -> f64 {
    2.0 / ((horizon as f64).powi(2) * (arms as f64).powi(3))
}

/// Bound `1 / (K^1.5 T^2)` on reconstructed losses.
pub fn reconstructed_consensus_bound(arms: usize, horizon: usize) -> f64 {
    1.0 / ((arms as f64).powf(1.5) * (horizon as f64).powi(2))
}

/// Two-slot state of the gossip iteration for `n` agents holding `dim`-vectors.
///
/// Storage is agent-major: agent `i` owns `[i * dim, (i + 1) * dim)`.
/// Each agent also keeps the rounding residual of its own state; only the
/// rounded values are exchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipBuffer {
    prev: Vec<f64>,
    curr: Vec<f64>,
    prev_lo: Vec<f64>,
    curr_lo: Vec<f64>,
    n: usize,
    dim: usize,
    step_index: usize,
}

impl GossipBuffer {
    pub fn zeros(n: usize, dim: usize) -> Self {
        let z = vec![0.0; n * dim];
        Self { prev: z.clone(), curr: z.clone(), prev_lo: z.clone(), curr_lo: z, n, dim, step_index: 0 }
    }

    /// Initializes `prev = curr = values` from one vector per agent.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let n = vectors.len();
        let dim = vectors.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * dim);
        for v in vectors {
            if v.len() != dim {
                return Err(Error::DimMismatch { expected: dim, actual: v.len() });
            }
            flat.extend_from_slice(v);
        }
        let z = vec![0.0; flat.len()];
        Ok(Self { prev: flat.clone(), curr: flat, prev_lo: z.clone(), curr_lo: z, n, dim, step_index: 0 })
    }

    /// Re-initializes every slot to `prev = curr = values` (flat, agent-major).
    pub fn reset(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n * self.dim {
            return Err(Error::DimMismatch { expected: self.n * self.dim, actual: values.len() });
        }
        self.curr.copy_from_slice(values);
        self.prev.copy_from_slice(values);
        self.curr_lo.fill(0.0);
        self.prev_lo.fill(0.0);
        self.step_index = 0;
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn curr(&self, i: usize) -> &[f64] {
        &self.curr[i * self.dim..(i + 1) * self.dim]
    }

    pub fn prev(&self, i: usize) -> &[f64] {
        &self.prev[i * self.dim..(i + 1) * self.dim]
    }

    /// Coordinate-wise network average of the current vectors.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n {
            for (acc, v) in m.iter_mut().zip(self.curr(i)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    fn check(&self, w: &GossipMatrix) -> Result<()> {
        if w.n_agents() != self.n {
            return Err(Error::DimMismatch { expected: w.n_agents(), actual: self.n });
        }
        Ok(())
    }

    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn update_agent(
        curr: &[f64],
        curr_lo: &[f64],
        dim: usize,
        i: usize,
        row: &[(usize, f64)],
        kappa: f64,
        out_prev: &mut [f64],
        out_prev_lo: &mut [f64],
    ) {
        // x_i + sum_j w_ij (x_j - x_i) keeps the mean exact for any symmetric off-diagonal weights
        for k in 0..dim {
            let xi = curr[i * dim + k];
            let mut mix = 0.0;
            let mut comp = 0.0;
            for &(j, wij) in row {
                if j == i {
                    continue;
                }
                let (d, de) = two_sum(curr[j * dim + k], -xi);
                let term = wij * d;
                comp += wij.mul_add(d, -term) + wij * de;
                let (t, te) = two_sum(mix, term);
                comp += te;
                mix = t;
            }
            let (hi, lo) = advance((xi, curr_lo[i * dim + k]), mix, comp, kappa, (out_prev[k], out_prev_lo[k]));
            out_prev[k] = hi;
            out_prev_lo[k] = lo;
        }
    }

    /// One gossip step in place.
    pub fn step(&mut self, w: &GossipMatrix, kappa: f64) -> Result<()> {
        self.check(w)?;
        let dim = self.dim;
        for i in 0..self.n {
            let range = i * dim..(i + 1) * dim;
            let (out, out_lo) = (&mut self.prev[range.clone()], &mut self.prev_lo[range]);
            Self::update_agent(&self.curr, &self.curr_lo, dim, i, w.row(i), kappa, out, out_lo);
        }
        self.swap();
        Ok(())
    }

    /// Same as [`GossipBuffer::step`], with agents updated on the rayon pool.
    pub fn step_parallel(&mut self, w: &GossipMatrix, kappa: f64) -> Result<()> {
        self.check(w)?;
        let dim = self.dim;
        if dim > 0 {
            let (curr, curr_lo) = (&self.curr, &self.curr_lo);
            self.prev.par_chunks_mut(dim).zip(self.prev_lo.par_chunks_mut(dim)).enumerate().for_each(
                |(i, (out, out_lo))| {
                    Self::update_agent(curr, curr_lo, dim, i, w.row(i), kappa, out, out_lo);
                },
            );
        }
        self.swap();
        Ok(())
    }

    fn swap(&mut self) {
        std::mem::swap(&mut self.prev, &mut self.curr);
        std::mem::swap(&mut self.prev_lo, &mut self.curr_lo);
        self.step_index += 1;
    }
}

/// Pure form of one gossip step.
pub fn gossip_step(buf: &GossipBuffer, w: &GossipMatrix, kappa: f64) -> Result<GossipBuffer> {
    let mut next = buf.clone();
    next.step(w, kappa)?;
    Ok(next)
}

/// Applies `params.block_len` gossip steps.
pub fn run_block_gossip(buf: &GossipBuffer, w: &GossipMatrix, params: &GossipParams) -> Result<GossipBuffer> {
    let mut next = buf.clone();
    for _ in 0..params.block_len {
        next.step(w, params.kappa)?;
    }
    Ok(next)
}

/// `max_i || curr(i) - mean(curr) ||_2`.
pub fn consensus_error(buf: &GossipBuffer) -> f64 {
    let mean = buf.mean();
    (0..buf.n_agents()).map(|i| distance(buf.curr(i), &mean)).fold(0.0, f64::max)
}

/// `max_i || curr(i) - target ||_2` against an externally computed average.
pub fn consensus_error_to(buf: &GossipBuffer, target: &[f64]) -> f64 {
    (0..buf.n_agents()).map(|i| distance(buf.curr(i), target)).fold(0.0, f64::max)
}

/// Frobenius distance of the current state to exact consensus.
pub fn frobenius_gap(buf: &GossipBuffer) -> f64 {
    let mean = buf.mean();
    (0..buf.n_agents()).map(|i| distance(buf.curr(i), &mean).powi(2)).sum::<f64>().sqrt()
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bp = s - a;
    (s, (a - (s - bp)) + (b - bp))
}

/// `x + (1 + kappa)(hi + lo) + kappa (x - prev)` for double-length `x` and `prev`,
/// returned as a rounded value and its residual.
#[inline]
fn advance(x: (f64, f64), hi: f64, lo: f64, kappa: f64, prev: (f64, f64)) -> (f64, f64) {
    let a = 1.0 + kappa;
    let (e, ee) = two_sum(x.0, -prev.0);
    let p = a * hi;
    let pe = a.mul_add(hi, -p);
    let q = kappa * e;
    let qe = kappa.mul_add(e, -q);
    let (s1, s1e) = two_sum(x.0, p);
    let (s2, s2e) = two_sum(s1, q);
    let tail = s1e + s2e + pe + qe + a * lo + x.1 + kappa * (ee + x.1 - prev.1);
    let out = s2 + tail;
    (out, tail - (out - s2))
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        comp += if f64::abs(sum) >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-block gossip channel shared by all agents of one replay.
///
/// Holds the buffer being mixed during the current block and the exact
/// network average of the vectors it was initialized with.
#[derive(Debug, Clone)]
pub struct BlockChannel<'w> {
    w: &'w GossipMatrix,
    kappa: f64,
    parallel: bool,
    buffer: GossipBuffer,
    target: Vec<f64>,
}

impl<'w> BlockChannel<'w> {
    pub fn new(w: &'w GossipMatrix, kappa: f64, dim: usize, parallel: bool) -> Self {
        let n = w.n_agents();
        Self { w, kappa, parallel, buffer: GossipBuffer::zeros(n, dim), target: vec![0.0; dim] }
    }

    pub fn buffer(&self) -> &GossipBuffer {
        &self.buffer
    }

    /// Exact average of the vectors the current block started from.
    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn step(&mut self) -> Result<()> {
        if self.parallel {
            self.buffer.step_parallel(self.w, self.kappa)
        } else {
            self.buffer.step(self.w, self.kappa)
        }
    }

    /// `max_i || z(i) - target ||_2` for the current state.
    pub fn consensus_error(&self) -> f64 {
        consensus_error_to(&self.buffer, &self.target)
    }

    /// Starts the next block from one vector per agent (flat, agent-major).
    pub fn reset(&mut self, values: &[f64]) -> Result<()> {
        self.buffer.reset(values)?;
        let n = self.buffer.n_agents();
        let dim = self.buffer.dim();
        for (k, t) in self.target.iter_mut().enumerate() {
            *t = compensated_sum((0..n).map(|i| values[i * dim + k])) / n as f64;
        }
        Ok(())
    }
}

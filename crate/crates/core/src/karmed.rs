//! `K`-armed agents running the block-based reduction.
//!
//! Within block `tau` every agent plays the frozen policy `p_tau(i)`,
//! accumulates importance-weighted estimates, and takes one gossip step on
//! the buffer holding the previous block's estimates. At the end of the block
//! the gossiped vector goes to the delayed-feedback learner and the buffer is
//! re-seeded with the fresh accumulator.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gossip::BlockChannel;
use crate::graph::GossipMatrix;
use crate::learners::{DelayedWrapper, Regularizer};
use crate::rng::{agent_stream, unit_f64};

const BINARY_MAGIC: &[u8; 4] = b"LTNS";

/// `(1 - alpha) p' + (alpha / K) 1`.
pub fn mix_exploration(p_prime: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let k = p_prime.len() as f64;
    Ok(p_prime.iter().map(|&x| (1.0 - alpha) * x + alpha / k).collect())
}

/// Importance-weighted estimate with a single nonzero coordinate at `arm`.
pub fn ipw_estimate(loss: f64, policy: &[f64], arm: usize, floor: f64) -> Result<Vec<f64>> {
    let p = policy[arm];
    if !(p >= floor) {
        return Err(Error::FloorViolation { arm, prob: p, floor });
    }
    let mut v = vec![0.0; policy.len()];
    v[arm] = loss / p;
    Ok(v)
}

/// Inverse-CDF draw from `p`. Falls back to the last arm with positive mass
/// when rounding leaves the cumulative sum below the uniform draw.
pub fn sample_arm<R: RngCore>(p: &[f64], rng: &mut R) -> usize {
    let u = unit_f64(rng);
    let mut acc = 0.0;
    for (k, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return k;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Losses `l_t(i, k)` in `[0, 1]`, stored `t`-major then agent then arm.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTensor {
    t: usize,
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl LossTensor {
    pub fn new(t: usize, n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != t * n * k {
            return Err(Error::DimMismatch { expected: t * n * k, actual: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            let (tt, rest) = (pos / (n * k), pos % (n * k));
            return Err(Error::OutOfRange(format!(
                "loss {} at (t={}, i={}, k={}) outside [0, 1]",
                values[pos],
                tt + 1,
                rest / k + 1,
                rest % k + 1
            )));
        }
        Ok(Self { t, n, k, values })
    }

    pub fn zeros(t: usize, n: usize, k: usize) -> Self {
        Self { t, n, k, values: vec![0.0; t * n * k] }
    }

    pub fn from_fn(t: usize, n: usize, k: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(t * n * k);
        for tt in 0..t {
            for i in 0..n {
                for kk in 0..k {
                    values.push(f(tt, i, kk));
                }
            }
        }
        Self::new(t, n, k, values)
    }

    pub fn horizon(&self) -> usize {
        self.t
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn arms(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, i: usize, k: usize) -> f64 {
        self.values[(t * self.n + i) * self.k + k]
    }

    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let s = (t * self.n + i) * self.k;
        &self.values[s..s + self.k]
    }

    /// Global average loss vector `(1/N) sum_i l_t(i)`.
    pub fn global_row(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for i in 0..self.n {
            for (o, v) in out.iter_mut().zip(self.row(t, i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.n as f64);
        out
    }

    /// The first `t` rounds.
    pub fn truncated(&self, t: usize) -> Result<Self> {
        if t > self.t {
            return Err(Error::OutOfRange(format!("cannot truncate {} rounds to {t}", self.t)));
        }
        Ok(Self { t, n: self.n, k: self.k, values: self.values[..t * self.n * self.k].to_vec() })
    }

    /// CSV with a `T,N,K` header line, then `t,i,k,value` rows (1-based indices).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "T,N,K")?;
        writeln!(out, "{},{},{}", self.t, self.n, self.k)?;
        writeln!(out, "t,i,k,value")?;
        for tt in 0..self.t {
            for i in 0..self.n {
                for kk in 0..self.k {
                    writeln!(out, "{},{},{},{:?}", tt + 1, i + 1, kk + 1, self.get(tt, i, kk))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let mut next = |what: &str| -> Result<String> {
            lines.next().ok_or_else(|| Error::Parse(format!("missing {what}")))?.map_err(Error::from)
        };
        if next("header")?.trim() != "T,N,K" {
            return Err(Error::Parse("expected `T,N,K` header".into()));
        }
        let dims: Vec<usize> = next("dimensions")?
            .split(',')
            .map(|s| s.trim().parse().map_err(|e| Error::Parse(format!("dimension: {e}"))))
            .collect::<Result<_>>()?;
        let [t, n, k] = dims[..] else {
            return Err(Error::Parse("dimension line needs three fields".into()));
        };
        if next("column header")?.trim() != "t,i,k,value" {
            return Err(Error::Parse("expected `t,i,k,value` column header".into()));
        }
        let mut values = vec![f64::NAN; t * n * k];
        let mut seen = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("bad row `{line}`")));
            }
            let idx = |s: &str, max: usize| -> Result<usize> {
                let v: usize = s.parse().map_err(|e| Error::Parse(format!("index `{s}`: {e}")))?;
                if v == 0 || v > max {
                    return Err(Error::Parse(format!("index {v} outside 1..={max}")));
                }
                Ok(v - 1)
            };
            let (tt, i, kk) = (idx(f[0], t)?, idx(f[1], n)?, idx(f[2], k)?);
            let v: f64 = f[3].parse().map_err(|e| Error::Parse(format!("value `{}`: {e}", f[3])))?;
            let slot = &mut values[(tt * n + i) * k + kk];
            if !slot.is_nan() {
                return Err(Error::Parse(format!("duplicate entry ({}, {}, {})", tt + 1, i + 1, kk + 1)));
            }
            *slot = v;
            seen += 1;
        }
        if seen != t * n * k {
            return Err(Error::Parse(format!("expected {} entries, found {seen}", t * n * k)));
        }
        Self::new(t, n, k, values)
    }

    /// Binary layout: `LTNS`, then `T`, `N`, `K` as little-endian `u64`, then the values as `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        for d in [self.t, self.n, self.k] {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("not a loss tensor file".into()));
        }
        let mut word = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            input.read_exact(&mut word)?;
            *d = u64::from_le_bytes(word) as usize;
        }
        let [t, n, k] = dims;
        let mut values = Vec::with_capacity(t * n * k);
        for _ in 0..t * n * k {
            input.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::new(t, n, k, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if path.extension().is_some_and(|e| e == "csv") {
            self.write_csv(file)
        } else {
            self.write_binary(file)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        if path.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(file)
        } else {
            Self::read_binary(std::io::BufReader::new(file))
        }
    }
}

/// One agent of the `K`-armed protocol.
#[derive(Debug, Clone)]
pub struct AgentState {
    id: usize,
    alpha: f64,
    policy: Vec<f64>,
    base_policy: Vec<f64>,
    wrapper: DelayedWrapper,
    accumulator: Vec<f64>,
    rng: ChaCha8Rng,
    rounds_in_block: usize,
}

impl AgentState {
    pub fn new(id: usize, arms: usize, alpha: f64, regularizer: Regularizer, rng: ChaCha8Rng) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::OutOfRange(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        Ok(Self {
            id,
            alpha,
            policy: vec![1.0 / arms as f64; arms],
            base_policy: vec![1.0 / arms as f64; arms],
            wrapper: DelayedWrapper::new(arms, regularizer)?,
            accumulator: vec![0.0; arms],
            rng,
            rounds_in_block: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Mixed policy `p_tau(i)` of the current block.
    pub fn policy(&self) -> &[f64] {
        &self.policy
    }

    /// Learner output `p'_tau(i)` before exploration.
    pub fn base_policy(&self) -> &[f64] {
        &self.base_policy
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    pub fn wrapper(&self) -> &DelayedWrapper {
        &self.wrapper
    }

    pub fn rounds_in_block(&self) -> usize {
        self.rounds_in_block
    }

    /// Exploration floor `alpha / K`.
    pub fn floor(&self) -> f64 {
        self.alpha / self.policy.len() as f64
    }

    /// Queries the learner for block `tau` and applies the exploration mix.
    pub fn start_block(&mut self, tau: usize) -> Result<()> {
        self.base_policy = self.wrapper.query(tau)?;
        self.policy = mix_exploration(&self.base_policy, self.alpha)?;
        let floor = self.floor();
        if let Some((arm, &prob)) = self.policy.iter().enumerate().find(|(_, &p)| !(p >= floor)) {
            return Err(Error::FloorViolation { arm, prob, floor });
        }
        self.rounds_in_block = 0;
        Ok(())
    }

    /// Plays one round against the local loss vector and returns the arm.
    pub fn agent_round(&mut self, losses: &[f64]) -> Result<usize> {
        let arm = sample_arm(&self.policy, &mut self.rng);
        let floor = self.floor();
        let p = self.policy[arm];
        if !(p >= floor) {
            return Err(Error::FloorViolation { arm, prob: p, floor });
        }
        let est = losses[arm] / p;
        let cap = self.policy.len() as f64 / self.alpha;
        if !(est <= cap * (1.0 + 1e-12)) {
            return Err(Error::BoundViolation { value: est, bound: cap });
        }
        self.accumulator[arm] += est;
        self.rounds_in_block += 1;
        Ok(arm)
    }

    /// Ends block `tau`: delivers the gossiped estimate of block `tau - 1`
    /// (ignored for `tau = 1`) and hands back the accumulator for the next buffer.
    pub fn commit_block(&mut self, tau: usize, gossiped: &[f64]) -> Result<Vec<f64>> {
        if tau >= 2 {
            self.wrapper.feed(tau - 1, gossiped)?;
        }
        Ok(std::mem::replace(&mut self.accumulator, vec![0.0; self.policy.len()]))
    }
}

/// Feedback delivered at the end of a block.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    /// Block whose estimates were gossiped.
    pub of_block: usize,
    /// Exact network average of those estimates.
    pub exact_mean: Vec<f64>,
    /// `max_i || z(i) - exact_mean ||_2`.
    pub consensus_err: f64,
}

/// All agents of one replay, stepped in lockstep.
#[derive(Debug, Clone)]
pub struct KArmedNetwork<'w> {
    agents: Vec<AgentState>,
    channel: BlockChannel<'w>,
    block_len: usize,
    parallel: bool,
    block: usize,
    round: usize,
    messages: u64,
    directed_edges: u64,
}

/// Static parameters of a `K`-armed replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KArmedSetup {
    pub arms: usize,
    pub block_len: usize,
    pub kappa: f64,
    pub alpha: f64,
    pub regularizer: Regularizer,
    pub master_seed: u64,
    pub replay: u64,
    pub parallel: bool,
}

impl<'w> KArmedNetwork<'w> {
    pub fn new(w: &'w GossipMatrix, setup: &KArmedSetup) -> Result<Self> {
        if setup.block_len == 0 {
            return Err(Error::OutOfRange("block length must be positive".into()));
        }
        let agents = (0..w.n_agents())
            .map(|i| {
                AgentState::new(
                    i,
                    setup.arms,
                    setup.alpha,
                    setup.regularizer,
                    agent_stream(setup.master_seed, setup.replay, i),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            agents,
            channel: BlockChannel::new(w, setup.kappa, setup.arms, setup.parallel),
            block_len: setup.block_len,
            parallel: setup.parallel,
            block: 0,
            round: 0,
            messages: 0,
            directed_edges: 2 * w.graph().edge_count() as u64,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn channel(&self) -> &BlockChannel<'w> {
        &self.channel
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Current block (1-based, 0 before the first block).
    pub fn block(&self) -> usize {
        self.block
    }

    pub fn rounds_played(&self) -> usize {
        self.round
    }

    /// Point-to-point messages sent so far (one per directed edge per gossip step).
    pub fn messages_sent(&self) -> u64 {
        self.messages
    }

    pub fn begin_block(&mut self) -> Result<()> {
        let tau = self.block + 1;
        for a in &mut self.agents {
            a.start_block(tau)?;
        }
        self.block = tau;
        Ok(())
    }

    /// One round: every agent plays against `losses.row(t, i)`, then one gossip step.
    pub fn play_round(&mut self, losses: &LossTensor) -> Result<()> {
        let t = self.round;
        if t >= losses.horizon() {
            return Err(Error::OutOfRange(format!("round {} beyond the loss horizon {}", t + 1, losses.horizon())));
        }
        if self.parallel {
            self.agents.par_iter_mut().try_for_each(|a| a.agent_round(losses.row(t, a.id)).map(|_| ()))?;
        } else {
            for a in &mut self.agents {
                a.agent_round(losses.row(t, a.id))?;
            }
        }
        self.channel.step()?;
        self.messages += self.directed_edges;
        self.round += 1;
        Ok(())
    }

    /// Ends the current block and returns the delivered feedback, if any.
    pub fn end_block(&mut self) -> Result<Option<Delivery>> {
        let tau = self.block;
        let delivery = (tau >= 2).then(|| Delivery {
            of_block: tau - 1,
            exact_mean: self.channel.target().to_vec(),
            consensus_err: self.channel.consensus_error(),
        });
        let mut next = Vec::with_capacity(self.agents.len() * self.channel.buffer().dim());
        for (i, a) in self.agents.iter_mut().enumerate() {
            let z = self.channel.buffer().curr(i).to_vec();
            next.extend(a.commit_block(tau, &z)?);
        }
        self.channel.reset(&next)?;
        Ok(delivery)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, metropolis_weights, Topology};
    use crate::rng::env_stream;

    #[test]
    fn mixing_examples() {
        assert_eq!(mix_exploration(&[1.0, 0.0], 0.01).unwrap(), vec![0.995, 0.005]);
        let u = mix_exploration(&[0.25; 4], 0.3).unwrap();
        assert!(u.iter().all(|&x| (x - 0.25).abs() < 1e-16));
        let p = mix_exploration(&[1.0, 0.0, 0.0, 0.0], 1.0 / 100.0).unwrap();
        assert_eq!(p.iter().copied().fold(1.0, f64::min), 0.0025);
        assert!(mix_exploration(&[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn ipw_examples() {
        assert_eq!(ipw_estimate(0.8, &[0.5, 0.5], 0, 0.01).unwrap(), vec![1.6, 0.0]);
        assert_eq!(ipw_estimate(0.0, &[0.5, 0.5], 1, 0.01).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(ipw_estimate(0.5, &[0.999, 0.001], 1, 0.01), Err(Error::FloorViolation { .. })));
    }

    #[test]
    fn degenerate_policy_samples_its_arm() {
        let mut rng = env_stream(3, 0);
        for _ in 0..100 {
            assert_eq!(sample_arm(&[0.0, 0.0, 1.0, 0.0], &mut rng), 2);
        }
    }

    #[test]
    fn tensor_round_trips() {
        let mut rng = env_stream(5, 1);
        let t = LossTensor::from_fn(4, 3, 2, |_, _, _| unit_f64(&mut rng)).unwrap();
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(LossTensor::read_csv(&csv[..]).unwrap(), t);
        let mut bin = Vec::new();
        t.write_binary(&mut bin).unwrap();
        assert_eq!(LossTensor::read_binary(&bin[..]).unwrap(), t);
        assert!(LossTensor::new(1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(LossTensor::read_csv("T,N,K\n1,1,2\nt,i,k,value\n1,1,1,0.5\n".as_bytes()).is_err());
    }

    #[test]
    fn block_accumulates_and_delivers_with_one_block_delay() {
        let g = build_topology(&Topology::Complete { n: 3 }, 0).unwrap();
        let w = metropolis_weights(&g).unwrap();
        let setup = KArmedSetup {
            arms: 2,
            block_len: 4,
            kappa: 0.0,
            alpha: 0.01,
            regularizer: Regularizer::NegEntropy { eta: 0.1 },
            master_seed: 11,
            replay: 0,
            parallel: false,
        };
        let losses = LossTensor::from_fn(12, 3, 2, |t, i, k| ((t + i + k) % 3) as f64 / 2.0).unwrap();
        let mut net = KArmedNetwork::new(&w, &setup).unwrap();
        let mut acc_block1 = Vec::new();
        for tau in 1..=3 {
            net.begin_block().unwrap();
            for _ in 0..4 {
                net.play_round(&losses).unwrap();
            }
            assert!(net.agents().iter().all(|a| a.rounds_in_block() == 4));
            if tau == 1 {
                let nnz: usize =
                    net.agents().iter().map(|a| a.accumulator().iter().filter(|&&x| x != 0.0).count()).sum();
                assert!(nnz <= 3 * 2);
                acc_block1 = net.agents().iter().flat_map(|a| a.accumulator().to_vec()).collect();
            }
            let d = net.end_block().unwrap();
            if tau == 1 {
                assert!(d.is_none());
                for i in 0..3 {
                    assert_eq!(net.channel().buffer().prev(i), net.channel().buffer().curr(i));
                }
            }
            if tau == 2 {
                let d = d.unwrap();
                assert_eq!(d.of_block, 1);
                let mean: Vec<f64> = (0..2).map(|k| (0..3).map(|i| acc_block1[i * 2 + k]).sum::<f64>() / 3.0).collect();
                for (a, b) in d.exact_mean.iter().zip(&mean) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!(d.consensus_err < 1e-12);
            }
        }
    }

    #[test]
    fn replay_is_deterministic_and_parallel_matches() {
        let g = build_topology(&Topology::Ring { n: 6 }, 0).unwrap();
        let w = metropolis_weights(&g).unwrap();
        let losses = LossTensor::from_fn(40, 6, 3, |t, i, k| ((t * 5 + i * 3 + k) % 7) as f64 / 6.0).unwrap();
        let run = |parallel: bool| {
            let setup = KArmedSetup {
                arms: 3,
                block_len: 5,
                kappa: 0.3,
                alpha: 1.0 / 40.0,
                regularizer: Regularizer::NegEntropy { eta: 0.05 },
                master_seed: 99,
                replay: 2,
                parallel,
            };
            let mut net = KArmedNetwork::new(&w, &setup).unwrap();
            let mut trace = Vec::new();
            for _ in 0..8 {
                net.begin_block().unwrap();
                trace.extend(net.agents().iter().flat_map(|a| a.policy().to_vec()));
                for _ in 0..5 {
                    net.play_round(&losses).unwrap();
                }
                net.end_block().unwrap();
            }
            trace
        };
        let a = run(false);
        assert_eq!(a, run(false));
        assert_eq!(a, run(true));
    }
}

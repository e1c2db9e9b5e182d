//! Linear bandits: action sets, volumetric spanners and the linear agents.
//!
//! Agents estimate the loss parameter with `M^{-1} a l`, project it onto the
//! spanner members and gossip only those `|S|` coordinates. After gossip the
//! full `K`-vector of losses is rebuilt with the spanner coefficients.
//!
//! When the action set does not span the ambient space, all linear algebra
//! runs in an orthonormal basis of its span.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gossip::BlockChannel;
use crate::graph::GossipMatrix;
use crate::karmed::{sample_arm, Delivery};
use crate::learners::{DelayedWrapper, Regularizer};
use crate::rng::{action_stream, agent_stream};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Slack on the spanner certificate `max_k a_k^T (S S^T)^+ a_k <= 1`.
pub const CERT_TOL: f64 = 1e-9;
/// Largest number of subsets the exhaustive fallback will enumerate.
pub const MAX_EXHAUSTIVE_SUBSETS: u64 = 2_000_000;

/// Finite action vectors `a_1, ..., a_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    ambient: Vec<Vec<f64>>,
    reduced: Vec<DVector<f64>>,
    /// `d x r` orthonormal basis of the span (identity when full rank).
    basis: DMatrix<f64>,
}

impl ActionSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let k = vectors.len();
        if k < 2 {
            return Err(Error::OutOfRange(format!("need at least 2 actions, got {k}")));
        }
        let d = vectors[0].len();
        if d == 0 {
            return Err(Error::OutOfRange("actions must have positive dimension".into()));
        }
        for v in &vectors {
            if v.len() != d {
                return Err(Error::DimMismatch { expected: d, actual: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::OutOfRange("action coordinates must be finite".into()));
            }
        }
        if vectors.iter().all(|v| v == &vectors[0]) {
            return Err(Error::RankDeficient("all actions are the same point".into()));
        }
        let a = DMatrix::from_fn(k, d, |r, c| vectors[r][c]);
        let svd = a.transpose().svd(true, false);
        let smax = svd.singular_values.max();
        let keep: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&j| svd.singular_values[j] > RANK_TOL * smax).collect();
        let rank = keep.len();
        if rank == 0 {
            return Err(Error::RankDeficient("all actions are zero".into()));
        }
        let basis = if rank == d {
            DMatrix::identity(d, d)
        } else {
            let u = svd.u.expect("left singular vectors requested");
            let mut b = DMatrix::zeros(d, rank);
            for (c, &j) in keep.iter().enumerate() {
                b.set_column(c, &u.column(j));
            }
            b
        };
        let reduced = vectors.iter().map(|v| basis.transpose() * DVector::from_column_slice(v)).collect();
        Ok(Self { ambient: vectors, reduced, basis })
    }

    /// `K` vectors drawn uniformly from the unit sphere in `R^d`.
    pub fn random_unit(arms: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = action_stream(seed);
        let vectors = (0..arms)
            .map(|_| {
                let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                g.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Self::new(vectors)
    }

    pub fn arms(&self) -> usize {
        self.ambient.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn effective_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.ambient[k]
    }

    /// Coordinates of `a_k` in the span basis.
    pub fn reduced(&self, k: usize) -> &DVector<f64> {
        &self.reduced[k]
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `<theta, a_k>` with `theta` in ambient coordinates.
    pub fn loss(&self, theta: &[f64], k: usize) -> f64 {
        theta.iter().zip(&self.ambient[k]).map(|(a, b)| a * b).sum()
    }

    /// CSV with one action per row. A first line that does not parse as numbers is a header.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match parsed {
                Ok(v) => rows.push(v),
                Err(_) if rows.is_empty() && n == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", n + 1))),
            }
        }
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for v in &self.ambient {
            let row: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Spanner check for a candidate member set.
#[derive(Debug, Clone, PartialEq)]
pub struct SpannerCertificate {
    /// `max_k a_k^T (S S^T)^+ a_k`.
    pub max_quadratic_form: f64,
    /// `max_k ||lambda^(k)||_2` with canonical coefficients for members.
    pub constant: f64,
    /// `max_k ||a_k - sum_j lambda^(k)(j) b_j||_2`.
    pub residual: f64,
    pub spans: bool,
    pub certified: bool,
}

/// Subset `S` of the actions with reconstruction coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricSpanner {
    members: Vec<usize>,
    position: Vec<Option<usize>>,
    /// `K x |S|`, row `k` is `lambda^(k)`.
    lambda: DMatrix<f64>,
    certificate: SpannerCertificate,
    size_cap: usize,
}

impl VolumetricSpanner {
    /// Builds the coefficients for a given member set (which need not certify).
    pub fn from_members(omega: &ActionSet, members: &[usize], size_cap: usize) -> Result<Self> {
        let mut members = members.to_vec();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(Error::OutOfRange("spanner needs at least one member".into()));
        }
        if let Some(&m) = members.iter().find(|&&m| m >= omega.arms()) {
            return Err(Error::OutOfRange(format!("member {m} out of range")));
        }
        let k = omega.arms();
        let mut position = vec![None; k];
        for (j, &m) in members.iter().enumerate() {
            position[m] = Some(j);
        }
        let pinv = member_pinv(omega, &members);
        let mut lambda = DMatrix::zeros(k, members.len());
        for kk in 0..k {
            match position[kk] {
                Some(j) => lambda[(kk, j)] = 1.0,
                None => lambda.set_row(kk, &(&pinv * omega.reduced(kk)).transpose()),
            }
        }
        let certificate = certify(omega, &members, &lambda, &pinv);
        Ok(Self { members, position, lambda, certificate, size_cap })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Index of arm `k` inside `S`, if it is a member.
    pub fn position(&self, k: usize) -> Option<usize> {
        self.position[k]
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn certificate(&self) -> &SpannerCertificate {
        &self.certificate
    }

    pub fn certified(&self) -> bool {
        self.certificate.certified
    }

    pub fn constant(&self) -> f64 {
        self.certificate.constant
    }

    pub fn size_cap(&self) -> usize {
        self.size_cap
    }

    pub fn within_cap(&self) -> bool {
        self.members.len() <= self.size_cap
    }

    /// Factor applied to `|S| / beta` in the estimate bound: `1` when certified, `c^2` otherwise.
    pub fn bound_factor(&self) -> f64 {
        if self.certified() {
            1.0
        } else {
            self.certificate.max_quadratic_form.max(self.constant().powi(2))
        }
    }

    /// Member list (1-based, one per line) and the `lambda` matrix as CSV.
    pub fn export<W1: Write, W2: Write>(&self, mut members: W1, mut lambda: W2) -> Result<()> {
        writeln!(members, "member")?;
        for m in &self.members {
            writeln!(members, "{}", m + 1)?;
        }
        let header: Vec<String> = self.members.iter().map(|m| format!("b{}", m + 1)).collect();
        writeln!(lambda, "arm,{}", header.join(","))?;
        for k in 0..self.lambda.nrows() {
            let row: Vec<String> = self.lambda.row(k).iter().map(|x| format!("{x:?}")).collect();
            writeln!(lambda, "{},{}", k + 1, row.join(","))?;
        }
        Ok(())
    }
}

/// Pseudo-inverse of the `r x |S|` member matrix.
fn member_pinv(omega: &ActionSet, members: &[usize]) -> DMatrix<f64> {
    let r = omega.effective_dim();
    let b = DMatrix::from_fn(r, members.len(), |row, col| omega.reduced(members[col])[row]);
    let svd = b.svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(RANK_TOL * smax.max(f64::MIN_POSITIVE)).expect("both factors computed")
}

fn certify(omega: &ActionSet, members: &[usize], lambda: &DMatrix<f64>, pinv: &DMatrix<f64>) -> SpannerCertificate {
    let mut max_q: f64 = 0.0;
    let mut constant: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let d = omega.ambient_dim();
    for k in 0..omega.arms() {
        let min_norm = pinv * omega.reduced(k);
        max_q = max_q.max(min_norm.norm_squared());
        constant = constant.max(lambda.row(k).norm());
        let mut rec = vec![0.0; d];
        for (j, &m) in members.iter().enumerate() {
            for (r, v) in rec.iter_mut().zip(omega.vector(m)) {
                *r += lambda[(k, j)] * v;
            }
        }
        let err = rec.iter().zip(omega.vector(k)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        residual = residual.max(err);
    }
    let spans = residual <= CERT_TOL;
    SpannerCertificate {
        max_quadratic_form: max_q,
        constant,
        residual,
        spans,
        certified: spans && max_q <= 1.0 + CERT_TOL && constant <= 1.0 + CERT_TOL,
    }
}

/// Certificate for an arbitrary member set.
pub fn spanner_certificate(omega: &ActionSet, members: &[usize]) -> Result<SpannerCertificate> {
    Ok(VolumetricSpanner::from_members(omega, members, usize::MAX)?.certificate)
}

/// Options for [`compute_spanner`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpannerOptions {
    /// Defaults to `3 d` (effective dimension).
    pub size_cap: Option<usize>,
    /// Fail with `SizeCapExceeded` instead of returning an oversized spanner.
    pub strict: bool,
}

fn quadratic_forms(omega: &ActionSet, members: &[usize]) -> Vec<f64> {
    let pinv = member_pinv(omega, members);
    (0..omega.arms()).map(|k| (&pinv * omega.reduced(k)).norm_squared()).collect()
}

/// Local-search basis of size `r` with every action a combination of it with coefficients in `[-1, 1]`.
fn max_volume_basis(omega: &ActionSet) -> Vec<usize> {
    let r = omega.effective_dim();
    let k = omega.arms();
    // greedy pivoting on residual norms
    let mut basis = Vec::with_capacity(r);
    let mut resid: Vec<DVector<f64>> = (0..k).map(|j| omega.reduced(j).clone()).collect();
    for _ in 0..r {
        let (best, _) = resid
            .iter()
            .enumerate()
            .filter(|(j, _)| !basis.contains(j))
            .map(|(j, v)| (j, v.norm()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        basis.push(best);
        let q = resid[best].normalize();
        for v in resid.iter_mut() {
            let c = q.dot(v);
            *v -= &q * c;
        }
    }
    // local search by determinant-increasing swaps
    for _ in 0..10_000 {
        let m = DMatrix::from_fn(r, r, |row, col| omega.reduced(basis[col])[row]);
        let Some(inv) = m.try_inverse() else { break };
        let mut swap = None;
        let mut worst = 1.0 + CERT_TOL;
        for j in 0..k {
            let coef = &inv * omega.reduced(j);
            for (slot, c) in coef.iter().enumerate() {
                if c.abs() > worst {
                    worst = c.abs();
                    swap = Some((slot, j));
                }
            }
        }
        match swap {
            Some((slot, j)) => basis[slot] = j,
            None => break,
        }
    }
    basis.sort_unstable();
    basis
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Smallest certified subset of size at most `cap`, by enumeration. `None` if there is none.
pub fn exhaustive_spanner(omega: &ActionSet, cap: usize) -> Option<Vec<usize>> {
    let k = omega.arms();
    for size in omega.effective_dim()..=cap.min(k) {
        let mut c: Vec<usize> = (0..size).collect();
        loop {
            let forms = quadratic_forms(omega, &c);
            if forms.iter().all(|&q| q <= 1.0 + CERT_TOL) && spanner_certificate(omega, &c).is_ok_and(|s| s.certified) {
                return Some(c);
            }
            if !next_combination(&mut c, k) {
                break;
            }
        }
    }
    None
}

/// Number of subsets [`exhaustive_spanner`] would visit in the worst case.
pub fn exhaustive_cost(omega: &ActionSet, cap: usize) -> u64 {
    let k = omega.arms() as u64;
    (omega.effective_dim() as u64..=(cap as u64).min(k)).map(|s| binomial(k, s)).fold(0u64, u64::saturating_add)
}

/// Builds a spanner: local-search basis, greedy additions until certified,
/// pruning, then an exhaustive search if the result is larger than the cap.
pub fn compute_spanner(omega: &ActionSet, opts: SpannerOptions) -> Result<VolumetricSpanner> {
    let cap = opts.size_cap.unwrap_or(3 * omega.effective_dim());
    let mut members = max_volume_basis(omega);
    loop {
        let forms = quadratic_forms(omega, &members);
        let (arg, worst) =
            forms.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (j, &q)| if q > acc.1 { (j, q) } else { acc });
        if worst <= 1.0 + CERT_TOL || members.contains(&arg) {
            break;
        }
        members.push(arg);
        members.sort_unstable();
    }
    // drop members whose removal keeps the certificate
    let mut changed = true;
    while changed {
        changed = false;
        for idx in (0..members.len()).rev() {
            if members.len() <= omega.effective_dim() {
                break;
            }
            let mut trial = members.clone();
            trial.remove(idx);
            if spanner_certificate(omega, &trial)?.certified {
                members = trial;
                changed = true;
                break;
            }
        }
    }
    if members.len() > cap {
        let found = members.len();
        if exhaustive_cost(omega, cap) <= MAX_EXHAUSTIVE_SUBSETS {
            if let Some(s) = exhaustive_spanner(omega, cap) {
                members = s;
            } else if opts.strict {
                return Err(Error::SizeCapExceeded { cap, found });
            }
        } else if opts.strict {
            return Err(Error::SizeCapExceeded { cap, found });
        }
    }
    VolumetricSpanner::from_members(omega, &members, cap)
}

/// `(1 - alpha - beta) p' + (alpha / K) 1 + (beta / |S|) 1_S`.
pub fn mix_exploration_linear(p_prime: &[f64], alpha: f64, beta: f64, spanner: &VolumetricSpanner) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && beta >= 0.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha}, beta = {beta}")));
    }
    if alpha + beta >= 1.0 {
        return Err(Error::RatesTooLarge(alpha + beta));
    }
    let k = p_prime.len() as f64;
    let s = spanner.size() as f64;
    Ok(p_prime
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let member = if spanner.position(j).is_some() { beta / s } else { 0.0 };
            (1.0 - alpha - beta) * x + alpha / k + member
        })
        .collect())
}

/// Cholesky factorization of `M = sum_k p_k a_k a_k^T` (span coordinates).
#[derive(Debug, Clone)]
pub struct CorrelationFactor {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jittered: bool,
}

impl CorrelationFactor {
    pub fn new(policy: &[f64], omega: &ActionSet) -> Result<Self> {
        let r = omega.effective_dim();
        let mut m = DMatrix::zeros(r, r);
        for (k, &p) in policy.iter().enumerate() {
            let a = omega.reduced(k);
            m.ger(p, a, a, 1.0);
        }
        Self::from_matrix(m)
    }

    /// Factorizes `m`, retrying once with `1e-12 tr(m) / d` added to the diagonal.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(Self { matrix: m, chol, jittered: false });
        }
        let jitter = 1e-12 * m.trace() / m.nrows() as f64;
        let mut mj = m.clone();
        for i in 0..mj.nrows() {
            mj[(i, i)] += jitter;
        }
        match Cholesky::new(mj) {
            Some(chol) => Ok(Self { matrix: m, chol, jittered: true }),
            None => Err(Error::NotSpd),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

/// `M^{-1} a l` through the factorization.
pub fn theta_hat(factor: &CorrelationFactor, played: &DVector<f64>, loss: f64) -> DVector<f64> {
    factor.solve(&(played * loss))
}

/// `<b_j, theta_hat>` for every member, checked against `bound`.
pub fn project_spanner_losses(
    theta: &DVector<f64>,
    spanner: &VolumetricSpanner,
    omega: &ActionSet,
    bound: f64,
) -> Result<Vec<f64>> {
    spanner
        .members()
        .iter()
        .map(|&m| {
            let v = omega.reduced(m).dot(theta);
            if v.abs() > bound {
                Err(Error::BoundViolation { value: v.abs(), bound })
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// `z~(k) = <lambda^(k), z>`.
pub fn reconstruct_losses(z: &[f64], spanner: &VolumetricSpanner) -> Result<Vec<f64>> {
    if z.len() != spanner.size() {
        return Err(Error::DimMismatch { expected: spanner.size(), actual: z.len() });
    }
    let lambda = spanner.lambda();
    Ok((0..lambda.nrows()).map(|k| lambda.row(k).iter().zip(z).map(|(a, b)| a * b).sum()).collect())
}

/// `eta = min(1/(6Bd), sqrt(ln K / (dTB + dT/N)))` and `beta = 3 B d eta`.
pub fn linear_rates(arms: usize, horizon: usize, n_agents: usize, block_len: usize, dim: usize) -> (f64, f64) {
    let (k, t, n, b, d) = (arms as f64, horizon as f64, n_agents as f64, block_len as f64, dim as f64);
    let eta = (1.0 / (6.0 * b * d)).min((k.ln() / (d * t * b + d * t / n)).sqrt());
    (eta, 3.0 * b * d * eta)
}

/// Loss parameters `theta_t(i)` in ambient coordinates, `t`-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSequence {
    t: usize,
    n: usize,
    d: usize,
    values: Vec<f64>,
    /// Per `(t, i)` scale that was divided out to keep losses in `[-1, 1]`.
    normalization: Vec<f64>,
}

impl ThetaSequence {
    pub fn new(t: usize, n: usize, d: usize, values: Vec<f64>, normalization: Vec<f64>) -> Result<Self> {
        if values.len() != t * n * d {
            return Err(Error::DimMismatch { expected: t * n * d, actual: values.len() });
        }
        if normalization.len() != t * n {
            return Err(Error::DimMismatch { expected: t * n, actual: normalization.len() });
        }
        Ok(Self { t, n, d, values, normalization })
    }

    pub fn horizon(&self) -> usize {
        self.t
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn theta(&self, t: usize, i: usize) -> &[f64] {
        let s = (t * self.n + i) * self.d;
        &self.values[s..s + self.d]
    }

    pub fn normalization(&self, t: usize, i: usize) -> f64 {
        self.normalization[t * self.n + i]
    }

    /// Largest normalization factor applied.
    pub fn max_normalization(&self) -> f64 {
        self.normalization.iter().copied().fold(1.0, f64::max)
    }

    /// `max_{t,i,k} |<theta_t(i), a_k>|`.
    pub fn max_abs_loss(&self, omega: &ActionSet) -> f64 {
        let mut m: f64 = 0.0;
        for t in 0..self.t {
            for i in 0..self.n {
                for k in 0..omega.arms() {
                    m = m.max(omega.loss(self.theta(t, i), k).abs());
                }
            }
        }
        m
    }

    /// Global average losses `l_bar_t(k) = (1/N) sum_i <theta_t(i), a_k>`, row per round.
    pub fn global_losses(&self, omega: &ActionSet) -> Vec<Vec<f64>> {
        (0..self.t)
            .map(|t| {
                (0..omega.arms())
                    .map(|k| (0..self.n).map(|i| omega.loss(self.theta(t, i), k)).sum::<f64>() / self.n as f64)
                    .collect()
            })
            .collect()
    }
}

/// One agent of the linear protocol.
#[derive(Debug, Clone)]
pub struct LinearAgentState {
    id: usize,
    alpha: f64,
    beta: f64,
    bound: f64,
    policy: Vec<f64>,
    base_policy: Vec<f64>,
    wrapper: DelayedWrapper,
    accumulator: Vec<f64>,
    factor: Option<CorrelationFactor>,
    rng: ChaCha8Rng,
    max_abs_estimate: f64,
    rounds_in_block: usize,
}

impl LinearAgentState {
    pub fn new(
        id: usize,
        spanner: &VolumetricSpanner,
        arms: usize,
        alpha: f64,
        beta: f64,
        regularizer: Regularizer,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::OutOfRange(format!("beta = {beta} must be positive")));
        }
        if alpha + beta >= 1.0 {
            return Err(Error::RatesTooLarge(alpha + beta));
        }
        Ok(Self {
            id,
            alpha,
            beta,
            bound: spanner.bound_factor() * spanner.size() as f64 / beta,
            policy: vec![1.0 / arms as f64; arms],
            base_policy: vec![1.0 / arms as f64; arms],
            wrapper: DelayedWrapper::new(arms, regularizer)?,
            accumulator: vec![0.0; spanner.size()],
            factor: None,
            rng,
            max_abs_estimate: 0.0,
            rounds_in_block: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn policy(&self) -> &[f64] {
        &self.policy
    }

    pub fn base_policy(&self) -> &[f64] {
        &self.base_policy
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `|S| / beta`, times `c^2` for an uncertified spanner.
    pub fn estimate_bound(&self) -> f64 {
        self.bound
    }

    /// Largest `|<a_k, theta_hat>|` seen so far.
    pub fn max_abs_estimate(&self) -> f64 {
        self.max_abs_estimate
    }

    pub fn factor(&self) -> Option<&CorrelationFactor> {
        self.factor.as_ref()
    }

    pub fn start_block(&mut self, tau: usize, spanner: &VolumetricSpanner, omega: &ActionSet) -> Result<()> {
        self.base_policy = self.wrapper.query(tau)?;
        self.policy = mix_exploration_linear(&self.base_policy, self.alpha, self.beta, spanner)?;
        let floor = self.alpha / self.policy.len() as f64;
        if let Some((arm, &prob)) = self.policy.iter().enumerate().find(|(_, &p)| !(p >= floor)) {
            return Err(Error::FloorViolation { arm, prob, floor });
        }
        self.factor = Some(CorrelationFactor::new(&self.policy, omega)?);
        self.rounds_in_block = 0;
        Ok(())
    }

    /// Plays one round; `loss_of` maps the chosen arm to its realized loss.
    pub fn agent_round(
        &mut self,
        loss_of: impl Fn(usize) -> f64,
        spanner: &VolumetricSpanner,
        omega: &ActionSet,
    ) -> Result<usize> {
        let factor = self.factor.as_ref().ok_or_else(|| Error::OutOfOrder("round before block start".into()))?;
        let arm = sample_arm(&self.policy, &mut self.rng);
        let theta = theta_hat(factor, omega.reduced(arm), loss_of(arm));
        let mut worst: f64 = 0.0;
        for k in 0..omega.arms() {
            worst = worst.max(omega.reduced(k).dot(&theta).abs());
        }
        self.max_abs_estimate = self.max_abs_estimate.max(worst);
        if worst > self.bound * (1.0 + 1e-9) {
            return Err(Error::BoundViolation { value: worst, bound: self.bound });
        }
        let proj = project_spanner_losses(&theta, spanner, omega, f64::INFINITY)?;
        for (acc, v) in self.accumulator.iter_mut().zip(proj) {
            *acc += v;
        }
        self.rounds_in_block += 1;
        Ok(arm)
    }

    /// Delivers the reconstructed loss of block `tau - 1` and returns the accumulator.
    pub fn commit_block(&mut self, tau: usize, gossiped: &[f64], spanner: &VolumetricSpanner) -> Result<Vec<f64>> {
        if tau >= 2 {
            self.wrapper.feed(tau - 1, &reconstruct_losses(gossiped, spanner)?)?;
        }
        Ok(std::mem::replace(&mut self.accumulator, vec![0.0; spanner.size()]))
    }
}

/// Linear delivery: consensus on spanner coordinates and on reconstructed losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDelivery {
    pub spanner: Delivery,
    /// `lambda * z_bar`, the exact reconstructed average.
    pub reconstructed_mean: Vec<f64>,
    /// `max_i || lambda z(i) - lambda z_bar ||_2`.
    pub reconstructed_err: f64,
}

/// Static parameters of a linear replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSetup {
    pub block_len: usize,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub master_seed: u64,
    pub replay: u64,
    pub parallel: bool,
}

/// All linear agents of one replay, stepped in lockstep.
#[derive(Debug, Clone)]
pub struct LinearNetwork<'a> {
    agents: Vec<LinearAgentState>,
    channel: BlockChannel<'a>,
    omega: &'a ActionSet,
    spanner: &'a VolumetricSpanner,
    parallel: bool,
    block_len: usize,
    block: usize,
    round: usize,
    messages: u64,
    directed_edges: u64,
}

impl<'a> LinearNetwork<'a> {
    pub fn new(
        w: &'a GossipMatrix,
        omega: &'a ActionSet,
        spanner: &'a VolumetricSpanner,
        setup: &LinearSetup,
    ) -> Result<Self> {
        if setup.block_len == 0 {
            return Err(Error::OutOfRange("block length must be positive".into()));
        }
        let reg = Regularizer::NegEntropy { eta: setup.eta };
        let agents = (0..w.n_agents())
            .map(|i| {
                LinearAgentState::new(
                    i,
                    spanner,
                    omega.arms(),
                    setup.alpha,
                    setup.beta,
                    reg,
                    agent_stream(setup.master_seed, setup.replay, i),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            agents,
            channel: BlockChannel::new(w, setup.kappa, spanner.size(), setup.parallel),
            omega,
            spanner,
            parallel: setup.parallel,
            block_len: setup.block_len,
            block: 0,
            round: 0,
            messages: 0,
            directed_edges: 2 * w.graph().edge_count() as u64,
        })
    }

    pub fn agents(&self) -> &[LinearAgentState] {
        &self.agents
    }

    pub fn channel(&self) -> &BlockChannel<'a> {
        &self.channel
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages
    }

    pub fn begin_block(&mut self) -> Result<()> {
        let tau = self.block + 1;
        let (spanner, omega) = (self.spanner, self.omega);
        if self.parallel {
            self.agents.par_iter_mut().try_for_each(|a| a.start_block(tau, spanner, omega))?;
        } else {
            for a in &mut self.agents {
                a.start_block(tau, spanner, omega)?;
            }
        }
        self.block = tau;
        Ok(())
    }

    pub fn play_round(&mut self, thetas: &ThetaSequence) -> Result<()> {
        let t = self.round;
        if t >= thetas.horizon() {
            return Err(Error::OutOfRange(format!("round {} beyond the horizon {}", t + 1, thetas.horizon())));
        }
        let (spanner, omega) = (self.spanner, self.omega);
        let play = |a: &mut LinearAgentState| {
            let theta = thetas.theta(t, a.id);
            a.agent_round(|k| omega.loss(theta, k), spanner, omega).map(|_| ())
        };
        if self.parallel {
            self.agents.par_iter_mut().try_for_each(play)?;
        } else {
            self.agents.iter_mut().try_for_each(play)?;
        }
        self.channel.step()?;
        self.messages += self.directed_edges;
        self.round += 1;
        Ok(())
    }

    pub fn end_block(&mut self) -> Result<Option<LinearDelivery>> {
        let tau = self.block;
        let delivery = if tau >= 2 {
            let target = self.channel.target().to_vec();
            let recon_mean = reconstruct_losses(&target, self.spanner)?;
            let mut recon_err: f64 = 0.0;
            for i in 0..self.agents.len() {
                let zi = reconstruct_losses(self.channel.buffer().curr(i), self.spanner)?;
                let e = zi.iter().zip(&recon_mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                recon_err = recon_err.max(e);
            }
            Some(LinearDelivery {
                spanner: Delivery {
                    of_block: tau - 1,
                    exact_mean: target,
                    consensus_err: self.channel.consensus_error(),
                },
                reconstructed_mean: recon_mean,
                reconstructed_err: recon_err,
            })
        } else {
            None
        };
        let mut next = Vec::with_capacity(self.agents.len() * self.spanner.size());
        for (i, a) in self.agents.iter_mut().enumerate() {
            let z = self.channel.buffer().curr(i).to_vec();
            next.extend(a.commit_block(tau, &z, self.spanner)?);
        }
        self.channel.reset(&next)?;
        Ok(delivery)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, metropolis_weights, Topology};

    fn basis(d: usize) -> ActionSet {
        ActionSet::new((0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()).unwrap()
    }

    /// `max_k a_k^T (S S^T)^{-1} a_k` through the normal equations (LU), independent of the SVD path.
    fn oracle_form(omega: &ActionSet, members: &[usize]) -> Option<f64> {
        let r = omega.effective_dim();
        let mut g = DMatrix::zeros(r, r);
        for &m in members {
            let a = omega.reduced(m);
            g += a * a.transpose();
        }
        let lu = g.lu();
        if lu.determinant().abs() < 1e-12 {
            return None;
        }
        let mut worst: f64 = 0.0;
        for k in 0..omega.arms() {
            let a = omega.reduced(k);
            worst = worst.max(a.dot(&lu.solve(a).unwrap()));
        }
        Some(worst)
    }

    fn oracle_exists(omega: &ActionSet, cap: usize) -> bool {
        let k = omega.arms();
        (1u32..(1u32 << k)).any(|mask| {
            let s: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
            s.len() <= cap && oracle_form(omega, &s).is_some_and(|q| q <= 1.0 + CERT_TOL)
        })
    }

    #[test]
    fn orthonormal_self_spanner() {
        let omega = basis(3);
        let s = compute_spanner(&omega, SpannerOptions::default()).unwrap();
        assert_eq!(s.members(), &[0, 1, 2]);
        assert!(s.certified());
        assert!((s.constant() - 1.0).abs() < 1e-12);
        assert!((s.certificate().max_quadratic_form - 1.0).abs() < 1e-12);
        for k in 0..3 {
            for j in 0..3 {
                assert_eq!(s.lambda()[(k, j)], if k == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn three_point_example() {
        let omega = ActionSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let full = VolumetricSpanner::from_members(&omega, &[0, 1, 2], 6).unwrap();
        assert!(full.certified());
        assert!((full.certificate().max_quadratic_form - 2.0 / 3.0).abs() < 1e-12);
        let pair = VolumetricSpanner::from_members(&omega, &[0, 1], 6).unwrap();
        assert!(!pair.certified());
        assert!((pair.constant() - 2f64.sqrt()).abs() < 1e-12);
        // pipeline finds a certified set and the oracle agrees with its certificate
        let s = compute_spanner(&omega, SpannerOptions::default()).unwrap();
        assert!(s.certified());
        let q = oracle_form(&omega, s.members()).unwrap();
        assert!((q - s.certificate().max_quadratic_form).abs() < 1e-12);
    }

    #[test]
    fn min_norm_lambda_matches_normal_equations() {
        let omega = ActionSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.3, -0.4]]).unwrap();
        let s = VolumetricSpanner::from_members(&omega, &[0, 1, 2], 6).unwrap();
        // lambda = S^T (S S^T)^{-1} a for the non-member
        let smat = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let g = &smat * smat.transpose();
        let a = DVector::from_vec(vec![0.3, -0.4]);
        let lam = smat.transpose() * g.lu().solve(&a).unwrap();
        for j in 0..3 {
            assert!((s.lambda()[(3, j)] - lam[j]).abs() < 1e-12);
        }
        let z = [0.7, -1.1, 2.0];
        let rec = reconstruct_losses(&z, &s).unwrap();
        assert_eq!(rec[0], 0.7);
        let expect: f64 = lam.iter().zip(&z).map(|(a, b)| a * b).sum();
        assert!((rec[3] - expect).abs() < 1e-12);
        assert_eq!(reconstruct_losses(&[0.0; 3], &s).unwrap(), vec![0.0; 4]);
        assert!(reconstruct_losses(&[0.0; 2], &s).is_err());
    }

    #[test]
    fn pipeline_agrees_with_exhaustive_oracle() {
        for seed in 0..40u64 {
            let d = 2 + (seed % 2) as usize;
            let k = 5 + (seed % 8) as usize;
            let omega = ActionSet::random_unit(k, d, seed).unwrap();
            let cap = 3 * d;
            let s = compute_spanner(&omega, SpannerOptions::default()).unwrap();
            let ours = s.certified() && s.within_cap();
            assert_eq!(ours, oracle_exists(&omega, cap), "seed {seed}");
            assert!(s.certificate().residual <= 1e-9);
            if s.certified() {
                assert!(oracle_form(&omega, s.members()).unwrap() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn strict_cap() {
        // unit circle points force more than 2 members in the plane
        let pts: Vec<Vec<f64>> = (0..7)
            .map(|j| {
                let a = std::f64::consts::PI * j as f64 / 7.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let omega = ActionSet::new(pts).unwrap();
        let opts = SpannerOptions { size_cap: Some(2), strict: true };
        assert!(matches!(compute_spanner(&omega, opts), Err(Error::SizeCapExceeded { cap: 2, .. })));
        let loose = compute_spanner(&omega, SpannerOptions { size_cap: Some(2), strict: false }).unwrap();
        assert!(loose.certified() && !loose.within_cap());
    }

    #[test]
    fn rank_deficient_sets_reduce_to_span() {
        let omega = ActionSet::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(omega.effective_dim(), 2);
        let s = compute_spanner(&omega, SpannerOptions::default()).unwrap();
        assert!(s.certified());
        assert!(s.certificate().residual < 1e-12);
        assert!(matches!(ActionSet::new(vec![vec![1.0, 2.0], vec![1.0, 2.0]]), Err(Error::RankDeficient(_))));
        // a set missing a direction is not a spanner
        let cert = spanner_certificate(&basis(3), &[0, 1]).unwrap();
        assert!(!cert.spans && !cert.certified);
    }

    #[test]
    fn linear_mixer() {
        let omega = ActionSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let s = VolumetricSpanner::from_members(&omega, &[0, 1], 6).unwrap();
        let p = mix_exploration_linear(&[1.0, 0.0, 0.0], 0.1, 0.2, &s).unwrap();
        let expect = [0.7 + 0.1 / 3.0 + 0.1, 0.1 / 3.0 + 0.1, 0.1 / 3.0];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(mix_exploration_linear(&[1.0, 0.0, 0.0], 0.5, 0.5, &s), Err(Error::RatesTooLarge(_))));
    }

    #[test]
    fn theta_hat_examples() {
        let one = ActionSet::new(vec![vec![1.0], vec![0.5]]).unwrap();
        let f = CorrelationFactor::new(&[1.0, 0.0], &one).unwrap();
        assert!((theta_hat(&f, one.reduced(0), 0.5)[0] - 0.5).abs() < 1e-15);

        let omega = basis(2);
        let f = CorrelationFactor::new(&[0.5, 0.5], &omega).unwrap();
        let th = theta_hat(&f, omega.reduced(0), 0.3);
        assert!((th[0] - 0.6).abs() < 1e-15 && th[1].abs() < 1e-15);
        let rhs = omega.reduced(0) * 0.3;
        assert!((f.matrix() * &th - rhs).norm() <= 1e-10);
        assert!(matches!(CorrelationFactor::from_matrix(DMatrix::from_element(2, 2, -1.0)), Err(Error::NotSpd)));
    }

    #[test]
    fn projection_examples() {
        let omega = basis(3);
        let s = compute_spanner(&omega, SpannerOptions::default()).unwrap();
        let th = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        assert_eq!(project_spanner_losses(&th, &s, &omega, 10.0).unwrap(), vec![2.0, 0.0, 0.0]);
        assert_eq!(project_spanner_losses(&DVector::zeros(3), &s, &omega, 10.0).unwrap(), vec![0.0; 3]);
        assert!(project_spanner_losses(&th, &s, &omega, 1.0).is_err());
    }

    #[test]
    fn rates() {
        let (eta, beta) = linear_rates(16, 10_000, 8, 254, 4);
        assert_eq!(eta, 1.0 / (6.0 * 254.0 * 4.0));
        assert!((beta - 0.5).abs() < 1e-15);
    }

    #[test]
    fn network_runs_and_respects_bound() {
        let g = build_topology(&Topology::Complete { n: 4 }, 0).unwrap();
        let w = metropolis_weights(&g).unwrap();
        let omega = ActionSet::random_unit(8, 3, 4).unwrap();
        let s = compute_spanner(&omega, SpannerOptions::default()).unwrap();
        let t_len = 60;
        let mut vals = Vec::new();
        for t in 0..t_len {
            for i in 0..4 {
                for j in 0..3 {
                    vals.push(0.3 * (((t + 2 * i + 3 * j) % 5) as f64 / 4.0 - 0.5));
                }
            }
        }
        let thetas = ThetaSequence::new(t_len, 4, 3, vals, vec![1.0; t_len * 4]).unwrap();
        assert!(thetas.max_abs_loss(&omega) <= 1.0);
        let run = |parallel| {
            let setup = LinearSetup {
                block_len: 6,
                kappa: 0.0,
                alpha: 1.0 / t_len as f64,
                beta: 0.3,
                eta: 0.05,
                master_seed: 5,
                replay: 0,
                parallel,
            };
            let mut net = LinearNetwork::new(&w, &omega, &s, &setup).unwrap();
            let mut trace = Vec::new();
            for _ in 0..10 {
                net.begin_block().unwrap();
                trace.extend(net.agents().iter().flat_map(|a| a.policy().to_vec()));
                for _ in 0..6 {
                    net.play_round(&thetas).unwrap();
                }
                if let Some(d) = net.end_block().unwrap() {
                    assert!(d.spanner.consensus_err < 1e-12);
                    assert!(d.reconstructed_err < 1e-12);
                }
            }
            for a in net.agents() {
                assert!(a.max_abs_estimate() <= a.estimate_bound());
            }
            assert_eq!(net.messages_sent(), 60 * 12);
            trace
        };
        assert_eq!(run(false), run(true));
    }
}

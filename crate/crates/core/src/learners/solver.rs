//! Minimizers of `<L, q> + psi(q)` over the probability simplex.
//!
//! The entropy case is a softmax. The hybrid potentials have no closed form:
//! each coordinate solves a one-dimensional monotone equation in `u = ln q`
//! for a given multiplier `nu`, and an outer safeguarded Newton search on `nu`
//! enforces `sum q = 1`.

use super::regularizer::Potential;
use crate::error::{Error, Result};

/// Iteration cap shared by the inner and outer searches.
pub const MAX_ITERATIONS: usize = 200;
/// Target on `|sum q - 1|` for the outer search.
pub const MASS_TOLERANCE: f64 = 1e-15;

/// Result of a simplex solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub q: Vec<f64>,
    pub iterations: usize,
    /// KKT residual in units of `ln q`, see [`kkt_residual`].
    pub residual: f64,
}

/// `argmin <L, q> + (1/eta) sum q log q`, computed as a stabilised softmax.
pub fn solve_entropy(cum_loss: &[f64], eta: f64) -> Vec<f64> {
    let m = cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = cum_loss.iter().map(|&l| (-eta * (l - m)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// `FTRL` objective `<L, q> + psi(q)`.
pub fn objective(cum_loss: &[f64], q: &[f64], psi: &Potential) -> f64 {
    cum_loss.iter().zip(q).map(|(l, x)| l * x).sum::<f64>() + psi.value(q)
}

/// Stationarity residual of `q` for `<L, q> + psi(q)`, in units of `ln q`.
///
/// With `g_k = L_k + d psi / d q_k` and curvature `c_k = q_k psi''(q_k)`, the
/// minimizer has `g_k = nu` for all `k`. The residual is
/// `max_k |g_k - nu_hat| / c_k` (the change in `ln q_k` needed to restore
/// stationarity, with `nu_hat` the `1/c`-weighted mean of `g`), plus the mass
/// defect `|sum q - 1|`. Zero at the exact minimizer.
pub fn kkt_residual(cum_loss: &[f64], q: &[f64], psi: &Potential) -> f64 {
    if q.iter().any(|&x| !(x > 0.0)) {
        return f64::INFINITY;
    }
    let m = cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
    let g: Vec<f64> = cum_loss.iter().zip(q).map(|(&l, &x)| l - m + psi.derivative(x)).collect();
    let w: Vec<f64> = q.iter().map(|&x| 1.0 / psi.log_curvature(x)).collect();
    let nu = g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    let worst = g.iter().zip(&w).map(|(a, b)| (a - nu).abs() * b).fold(0.0, f64::max);
    worst + (q.iter().sum::<f64>() - 1.0).abs()
}

/// `h(u) = (1/eta)(u + 1) + R'(e^u)` and its derivative, for the hybrid potentials.
fn h_and_slope(psi: &Potential, u: f64) -> (f64, f64) {
    match *psi {
        Potential::Entropy { eta } => ((u + 1.0) / eta, 1.0 / eta),
        Potential::LogBarrier { eta, gamma } => {
            let e = (-u).exp();
            ((u + 1.0) / eta - e / gamma, 1.0 / eta + e / gamma)
        }
        Potential::Tsallis { eta, gamma } => {
            let e = (-0.5 * u).exp();
            ((u + 1.0) / eta - e / gamma, 1.0 / eta + 0.5 * e / gamma)
        }
    }
}

/// Safeguarded Newton for an increasing `f` on a bracket `f(lo) <= 0 <= f(hi)`.
///
/// Falls back to bisection when the Newton step leaves the bracket or does not
/// shrink fast enough. Returns `(x, iterations)`.
fn safeguarded_newton(
    mut f: impl FnMut(f64) -> Result<(f64, f64)>,
    mut lo: f64,
    mut hi: f64,
    ftol: f64,
) -> Result<(f64, usize)> {
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    let mut x = 0.5 * (lo + hi);
    let mut last = f64::NAN;
    for it in 1..=MAX_ITERATIONS {
        let (fx, slope) = f(x)?;
        last = fx;
        if fx.abs() <= ftol {
            return Ok((x, it));
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / slope;
        let slow = (2.0 * fx).abs() > (dx_old * slope).abs();
        dx_old = dx;
        if !newton.is_finite() || newton <= lo || newton >= hi || slow {
            dx = 0.5 * (hi - lo);
            x = lo + dx;
        } else {
            dx = x - newton;
            x = newton;
        }
        if dx.abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
            let (fx, _) = f(x)?;
            if !fx.is_finite() {
                return Err(Error::SolverDiverged { iterations: it + 1, residual: fx.abs() });
            }
            return Ok((x, it + 1));
        }
    }
    Err(Error::SolverDiverged { iterations: MAX_ITERATIONS, residual: last.abs() })
}

/// Solves `h(u) = c` for the increasing function `h`. Returns `(u, iterations)`.
fn solve_coordinate(psi: &Potential, c: f64) -> Result<(f64, usize)> {
    // h(u) <= (u + 1)/eta, so h(eta c - 1) <= c
    let mut lo = psi.eta() * c - 1.0;
    if let Potential::LogBarrier { gamma, .. } | Potential::Tsallis { gamma, .. } = *psi {
        // where the barrier alone equals c and the entropy part is nonpositive
        if c < 0.0 {
            let power = if matches!(psi, Potential::Tsallis { .. }) { 2.0 } else { 1.0 };
            let ub = -power * (-gamma * c).ln();
            if ub <= -1.0 {
                lo = lo.max(ub);
            }
        }
    }
    let mut hi = lo.max(0.0) + 1.0;
    let mut width = hi - lo;
    let mut it = 0;
    while h_and_slope(psi, hi).0 < c {
        lo = hi;
        width *= 2.0;
        hi += width;
        it += 1;
        if it > MAX_ITERATIONS {
            return Err(Error::SolverDiverged { iterations: it, residual: f64::NAN });
        }
    }
    let (u, n) = safeguarded_newton(
        |u| {
            let (h, s) = h_and_slope(psi, u);
            Ok((h - c, s))
        },
        lo,
        hi,
        0.0,
    )?;
    Ok((u, it + n))
}

/// Coordinates `q_k(nu) = exp(u_k)` with `h(u_k) = nu - L_k`, and `d q_k / d nu`.
fn coords(psi: &Potential, shifted: &[f64], nu: f64, q: &mut [f64], dq: &mut [f64]) -> Result<usize> {
    let mut it = 0;
    for (k, &l) in shifted.iter().enumerate() {
        let (u, n) = solve_coordinate(psi, nu - l)?;
        it += n;
        let x = u.exp();
        q[k] = x;
        dq[k] = x / h_and_slope(psi, u).1;
    }
    Ok(it)
}

/// `argmin <L, q> + psi(q)` for any potential, via the nested monotone search.
pub fn solve_simplex_hybrid(cum_loss: &[f64], psi: &Potential) -> Result<SimplexSolution> {
    let k = cum_loss.len();
    if k == 0 {
        return Err(Error::DimMismatch { expected: 1, actual: 0 });
    }
    if cum_loss.iter().any(|l| !l.is_finite()) {
        return Err(Error::OutOfRange("cumulative losses must be finite".into()));
    }
    let m = cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = cum_loss.iter().map(|l| l - m).collect();
    let max_l = shifted.iter().copied().fold(0.0, f64::max);

    // at nu_lo every q_k <= 1/K, at nu_hi every q_k >= 1/K
    let anchor = h_and_slope(psi, -(k as f64).ln()).0;
    let mut q = vec![0.0; k];
    let mut dq = vec![0.0; k];
    let (nu, iterations) = safeguarded_newton(
        |nu| {
            coords(psi, &shifted, nu, &mut q, &mut dq)?;
            Ok((q.iter().sum::<f64>() - 1.0, dq.iter().sum()))
        },
        anchor,
        max_l + anchor,
        MASS_TOLERANCE,
    )?;
    coords(psi, &shifted, nu, &mut q, &mut dq)?;
    let mass = q.iter().sum::<f64>() - 1.0;
    if !(mass.abs() <= 1e-10) {
        return Err(Error::SolverDiverged { iterations, residual: mass.abs() });
    }
    q.iter_mut().for_each(|x| *x /= 1.0 + mass);
    let residual = kkt_residual(cum_loss, &q, psi);
    Ok(SimplexSolution { q, iterations, residual })
}

/// Dispatches to the closed form for pure entropy and to the hybrid search otherwise.
pub fn solve(cum_loss: &[f64], psi: &Potential) -> Result<SimplexSolution> {
    match *psi {
        Potential::Entropy { eta } => {
            let q = solve_entropy(cum_loss, eta);
            let residual = kkt_residual(cum_loss, &q, psi);
            Ok(SimplexSolution { q, iterations: 0, residual })
        }
        _ => solve_simplex_hybrid(cum_loss, psi),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_min(cum_loss: &[f64; 3], psi: &Potential, steps: usize) -> f64 {
        let mut best = f64::INFINITY;
        for i in 1..steps {
            for j in 1..(steps - i) {
                let a = i as f64 / steps as f64;
                let b = j as f64 / steps as f64;
                let q = [a, b, 1.0 - a - b];
                if q[2] > 0.0 {
                    best = best.min(objective(cum_loss, &q, psi));
                }
            }
        }
        best
    }

    #[test]
    fn softmax_values() {
        let q = solve_entropy(&[2.0, 1.0, 0.0], 1.0);
        let expect = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_9];
        for (a, b) in q.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_unstabilised_form() {
        let l = [0.3, -1.2, 2.5, 0.0];
        let q = solve_entropy(&l, 0.7);
        let w: Vec<f64> = l.iter().map(|x| (-0.7 * x).exp()).collect();
        let s: f64 = w.iter().sum();
        for (a, b) in q.iter().zip(&w) {
            assert!((a - b / s).abs() < 1e-14);
        }
    }

    #[test]
    fn hybrid_with_tiny_barrier_matches_softmax() {
        let l = [1.0, 3.0, 0.5, 2.0];
        let psi = Potential::LogBarrier { eta: 0.8, gamma: 1e12 };
        let sol = solve_simplex_hybrid(&l, &psi).unwrap();
        let soft = solve_entropy(&l, 0.8);
        for (a, b) in sol.q.iter().zip(&soft) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_barrier_beats_grid() {
        let l = [0.0, 1.0, 2.0];
        let psi = Potential::LogBarrier { eta: 1.0, gamma: 1.0 };
        let sol = solve_simplex_hybrid(&l, &psi).unwrap();
        assert!(sol.residual <= 1e-10);
        assert!((sol.q.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(sol.q.iter().all(|&x| x > 0.0));
        let grid = grid_min(&l, &psi, 1000);
        let obj = objective(&l, &sol.q, &psi);
        assert!(obj <= grid + 1e-12 * (1.0 + grid.abs()));
        assert!(grid - obj < 1e-4);
    }

    #[test]
    fn tsallis_beats_grid() {
        let l = [5.0, 0.2, 1.4];
        let psi = Potential::Tsallis { eta: 0.5, gamma: 0.3 };
        let sol = solve_simplex_hybrid(&l, &psi).unwrap();
        assert!(sol.residual <= 1e-10);
        let grid = grid_min(&l, &psi, 1000);
        assert!(objective(&l, &sol.q, &psi) <= grid + 1e-12 * (1.0 + grid.abs()));
    }

    #[test]
    fn tsallis_extreme_losses_stay_positive() {
        let l = [1e6, 0.0, 3e5, 42.0, 1e6];
        let psi = Potential::Tsallis { eta: 0.25, gamma: 2.0 };
        let sol = solve_simplex_hybrid(&l, &psi).unwrap();
        assert!(sol.q.iter().all(|&x| x >= 1e-300));
        assert!(sol.residual <= 1e-10, "residual {}", sol.residual);
    }

    #[test]
    fn uniform_at_zero_loss() {
        for psi in [Potential::LogBarrier { eta: 0.01, gamma: 0.5 }, Potential::Tsallis { eta: 3.0, gamma: 7.0 }] {
            let sol = solve_simplex_hybrid(&[0.0; 6], &psi).unwrap();
            for x in sol.q {
                assert!((x - 1.0 / 6.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let psi = Potential::LogBarrier { eta: 1.0, gamma: 1.0 };
        assert!(solve_simplex_hybrid(&[0.0, f64::NAN], &psi).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariance(
            l in prop::collection::vec(-50.0f64..50.0, 2..8),
            shift in -1e3f64..1e3,
            eta in 0.01f64..2.0,
            gamma in 0.01f64..5.0,
            tsallis in any::<bool>(),
        ) {
            let psi = if tsallis { Potential::Tsallis { eta, gamma } } else { Potential::LogBarrier { eta, gamma } };
            let a = solve(&l, &psi).unwrap();
            let moved: Vec<f64> = l.iter().map(|x| x + shift).collect();
            let b = solve(&moved, &psi).unwrap();
            for (x, y) in a.q.iter().zip(&b.q) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn kkt_and_positivity(
            l in prop::collection::vec(0.0f64..1e4, 2..16),
            eta in 1e-4f64..1.0,
            gamma in 1e-3f64..10.0,
            tsallis in any::<bool>(),
        ) {
            let psi = if tsallis { Potential::Tsallis { eta, gamma } } else { Potential::LogBarrier { eta, gamma } };
            let sol = solve(&l, &psi).unwrap();
            prop_assert!(sol.q.iter().all(|&x| x > 0.0));
            prop_assert!((sol.q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(sol.residual <= 1e-10, "residual {}", sol.residual);
        }

        #[test]
        fn entropy_positive_and_normalised(
            l in prop::collection::vec(-100.0f64..100.0, 2..16),
            eta in 1e-4f64..3.0,
        ) {
            let q = solve_entropy(&l, eta);
            prop_assert!(q.iter().all(|&x| x > 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

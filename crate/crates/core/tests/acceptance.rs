use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gossip_bandits::gossip::{
    decay_factor, frobenius_gap, karmed_consensus_bound, linear_consensus_bound, mixing_coefficient,
    reconstructed_consensus_bound, GossipBuffer, CONSENSUS_FLOOR,
};
use gossip_bandits::graph::{build_topology, metropolis_weights, spectral_gap, Topology};
use gossip_bandits::harness::{run_experiment, write_run_csv, Experiment, ExperimentConfig};
use gossip_bandits::karmed::{ipw_estimate, sample_arm};
use gossip_bandits::learners::{objective, solve, solve_entropy, Potential};
use gossip_bandits::linear::{exhaustive_spanner, theta_hat, ActionSet, CorrelationFactor};

/// Worst-case bound `2 sqrt(2 ln K (B + 3K/N) T) + 10` at K = 2, N = 16, T = 10^4, B = 213.
const WORST_CASE_BOUND: f64 = 3449.770685984498;
const GHOST_SLACK: f64 = 1e-6;
const SE_MULTIPLIER: f64 = 3.0;
const SOLVER_GRID: usize = 1000;
const BOBW_GROWTH_MAX: f64 = 0.35;
const ADVERSARIAL_RATIO_MAX: f64 = 2.6;

const KARMED: &str = r#"
[topology]
kind = "complete"
n = 16

[algorithm]
variant = "worst_case"
horizon = 10000
arms = 2
master_seed = 1
num_seeds = 20

[environment]
resample = true
[environment.losses]
kind = "iid_uniform"
"#;

const LINEAR: &str = r#"
[topology]
kind = "complete"
n = 8

[algorithm]
variant = "linear"
horizon = 10000
arms = 16
master_seed = 7
num_seeds = 20

[environment]
resample = true
[environment.theta]
kind = "iid_gaussian_normalized"
signal = 1.0
noise = 0.5
[environment.actions]
kind = "random_unit"
dim = 4
seed = 3
"#;

const BOBW: &str = r#"
[topology]
kind = "complete"
n = 8

[algorithm]
variant = "bobw"
horizon = 160000
arms = 4
master_seed = 11
num_seeds = 20

[environment]
resample = true
[environment.losses]
kind = "gap"
delta = 0.25
"#;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn config(base: &str, edits: &[(&str, &str)]) -> ExperimentConfig {
    let mut table: toml::Table = toml::from_str(base).unwrap();
    for (k, v) in edits {
        gossip_bandits::harness::config::set_key(&mut table, k, gossip_bandits::harness::config::parse_value(v))
            .unwrap();
    }
    ExperimentConfig::from_table(table).unwrap()
}

fn run(base: &str, edits: &[(&str, &str)]) -> Experiment {
    run_experiment(&config(base, edits)).unwrap()
}

fn per_round(e: &Experiment) -> f64 {
    e.report.reg_t / e.params.effective_horizon as f64
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn consensus(karmed_5: &[Experiment]) -> Outcome {
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut allowed = f64::INFINITY;
    for e in karmed_5 {
        let p = &e.params;
        let bound = karmed_consensus_bound(p.block_len, p.arms, p.horizon).max(CONSENSUS_FLOOR);
        allowed = allowed.min(bound);
        worst = worst.max(e.max_consensus_err());
        pass &= e.max_consensus_err() <= bound && e.violations() == 0;
    }
    let b = karmed_5[0].params.block_len;
    Outcome {
        id: 1,
        name: "consensus within 2B/(KT)^5",
        pass,
        detail: format!("B = {b}, max error {worst:e} <= {allowed:e} over {} master seeds", karmed_5.len()),
    }
}

fn gossip_decay() -> Outcome {
    let mut pass = true;
    let mut worst_ratio = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for topo in [Topology::Ring { n: 8 }, Topology::Grid { rows: 4, cols: 4 }] {
        let w = metropolis_weights(&build_topology(&topo, 0).unwrap()).unwrap();
        let s = spectral_gap(&w).unwrap();
        let kappa = mixing_coefficient(s.sigma2).unwrap();
        for steps in [10usize, 25, 50] {
            for _ in 0..20 {
                let x: Vec<Vec<f64>> =
                    (0..w.n_agents()).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                let mut buf = GossipBuffer::from_vectors(&x).unwrap();
                let initial = frobenius_gap(&buf);
                for _ in 0..steps {
                    buf.step(&w, kappa).unwrap();
                }
                let cert = decay_factor(s.rho, steps) * initial;
                worst_ratio = worst_ratio.max(frobenius_gap(&buf) / cert);
                pass &= frobenius_gap(&buf) <= cert;
            }
        }
    }
    Outcome {
        id: 2,
        name: "accelerated gossip decay certificate",
        pass,
        detail: format!(
            "ring 8 and grid 4x4, B in {{10, 25, 50}}, 20 trials each, max gap/certificate {worst_ratio:.3e}"
        ),
    }
}

fn unbiasedness() -> Outcome {
    const SAMPLES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut pass = true;
    let mut worst_z = 0.0f64;

    let policy = [0.1, 0.2, 0.3, 0.4];
    let losses = [0.9, 0.25, 0.6, 0.05];
    let mut cols: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(SAMPLES)).collect();
    for _ in 0..SAMPLES {
        let arm = sample_arm(&policy, &mut rng);
        let est = ipw_estimate(losses[arm], &policy, arm, 0.0).unwrap();
        for (c, v) in cols.iter_mut().zip(est) {
            c.push(v);
        }
    }
    for (c, truth) in cols.iter().zip(losses) {
        let (m, se) = mean_and_se(c);
        let z = (m - truth).abs() / se;
        worst_z = worst_z.max(z);
        pass &= z <= SE_MULTIPLIER;
    }

    let omega = ActionSet::random_unit(6, 3, 5).unwrap();
    let policy = [0.05, 0.1, 0.15, 0.2, 0.25, 0.25];
    let theta = [0.4, -0.3, 0.2];
    let factor = CorrelationFactor::new(&policy, &omega).unwrap();
    let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(SAMPLES)).collect();
    for _ in 0..SAMPLES {
        let arm = sample_arm(&policy, &mut rng);
        let est = theta_hat(&factor, omega.reduced(arm), omega.loss(&theta, arm));
        for (c, v) in cols.iter_mut().zip(est.iter()) {
            c.push(*v);
        }
    }
    let truth = omega.basis().transpose() * nalgebra::DVector::from_column_slice(&theta);
    for (c, t) in cols.iter().zip(truth.iter()) {
        let (m, se) = mean_and_se(c);
        let z = (m - t).abs() / se;
        worst_z = worst_z.max(z);
        pass &= z <= SE_MULTIPLIER;
    }
    Outcome {
        id: 3,
        name: "importance-weighted estimators unbiased",
        pass,
        detail: format!("{SAMPLES} samples, worst |mean - truth| = {worst_z:.2} SE (limit {SE_MULTIPLIER})"),
    }
}

fn regret_bound(karmed_20: &Experiment, slope: &[f64]) -> Outcome {
    let r = &karmed_20.report;
    let se = r.reg_t_se.unwrap_or(0.0);
    let upper = r.reg_t + 2.0 * se;
    let pass = upper <= WORST_CASE_BOUND && strictly_decreasing(slope);
    Outcome {
        id: 4,
        name: "worst-case regret below bound, sublinear",
        pass,
        detail: format!(
            "Reg_T = {:.3} +- {:.3}, mean + 2 SE = {upper:.3} <= {WORST_CASE_BOUND}; Reg_T/T at T = 2500, 5000, 10000: {:.4e}, {:.4e}, {:.4e}",
            r.reg_t, se, slope[0], slope[1], slope[2]
        ),
    }
}

fn ghost(karmed: &[&Experiment], linear: &[&Experiment]) -> Outcome {
    let max_of = |es: &[&Experiment]| es.iter().filter_map(|e| e.max_ghost_ratio()).fold(0.0, f64::max);
    let k = max_of(karmed);
    let l = max_of(linear);
    let present = karmed.iter().chain(linear).all(|e| e.max_ghost_ratio().is_some());
    let pass = present && k <= 3.0 + GHOST_SLACK && l <= 6.0 + GHOST_SLACK;
    Outcome {
        id: 5,
        name: "ghost policy ratio",
        pass,
        detail: format!("K-armed max {k:.6} <= 3, linear max {l:.6} <= 6"),
    }
}

fn grid_min(cum: &[f64], psi: &Potential) -> f64 {
    let g = SOLVER_GRID;
    let mut best = f64::INFINITY;
    if cum.len() == 2 {
        for a in 1..g {
            let x = a as f64 / g as f64;
            best = best.min(objective(cum, &[x, 1.0 - x], psi));
        }
    } else {
        for a in 1..g {
            for b in 1..g - a {
                let (x, y) = (a as f64 / g as f64, b as f64 / g as f64);
                best = best.min(objective(cum, &[x, y, 1.0 - x - y], psi));
            }
        }
    }
    best
}

fn solver_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut pass = true;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_entropy = 0.0f64;
    for trial in 0..100 {
        let k = if trial % 2 == 0 { 2 } else { 3 };
        let cum: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..20.0)).collect();
        let eta = rng.random_range(0.05..1.0);
        let gamma = rng.random_range(0.05..2.0);
        for psi in [Potential::LogBarrier { eta, gamma }, Potential::Tsallis { eta, gamma }] {
            let q = solve(&cum, &psi).unwrap().q;
            let gap = objective(&cum, &q, &psi) - grid_min(&cum, &psi);
            worst_gap = worst_gap.max(gap);
            pass &= gap <= 1e-12 * (1.0 + grid_min(&cum, &psi).abs());
        }
        let q = solve(&cum, &Potential::Entropy { eta }).unwrap().q;
        let m = cum.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = cum.iter().map(|l| (-eta * (l - m)).exp()).collect();
        let s: f64 = w.iter().sum();
        let closed = q.iter().zip(&w).map(|(a, b)| (a - b / s).abs()).fold(0.0, f64::max);
        let soft = q.iter().zip(solve_entropy(&cum, eta)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_entropy = worst_entropy.max(closed.max(soft));
        pass &= closed <= 1e-12 && soft <= 1e-12;
    }
    Outcome {
        id: 6,
        name: "FTRL solver matches grid search and closed form",
        pass,
        detail: format!(
            "100 vectors, K in {{2, 3}}: solver - grid objective max {worst_gap:.3e} (<= 0), entropy deviation {worst_entropy:.1e}"
        ),
    }
}

fn linear_criterion(linear: &[Experiment]) -> Outcome {
    let e = &linear[2];
    let p = &e.params;
    let sp = p.spanner.as_ref().unwrap();
    let omega = ActionSet::random_unit(16, 4, 3).unwrap();
    let spanner_ok = sp.certified || exhaustive_spanner(&omega, sp.size_cap).is_none();
    let est_bound = sp.size as f64 / p.beta.unwrap() * sp.bound_factor;
    let max_est = linear.iter().flat_map(|e| &e.runs).filter_map(|r| r.max_abs_estimate).fold(0.0, f64::max);
    let mut consensus_ok = true;
    let mut worst_z = 0.0f64;
    let mut worst_rec = 0.0f64;
    for e in linear {
        let q = &e.params;
        let zb = linear_consensus_bound(q.arms, q.horizon).max(CONSENSUS_FLOOR);
        let rb = reconstructed_consensus_bound(q.arms, q.horizon).max(CONSENSUS_FLOOR);
        for r in &e.runs {
            worst_z = worst_z.max(r.max_consensus_err);
            worst_rec = worst_rec.max(r.max_reconstructed_err.unwrap_or(f64::INFINITY));
            consensus_ok &= r.max_consensus_err <= zb && r.max_reconstructed_err.is_some_and(|x| x <= rb);
        }
    }
    let slope: Vec<f64> = linear.iter().map(per_round).collect();
    let pass = spanner_ok && max_est <= est_bound && consensus_ok && strictly_decreasing(&slope);
    Outcome {
        id: 7,
        name: "linear bandit pipeline",
        pass,
        detail: format!(
            "spanner size {} certified {} (c = {:.3}); max |estimate| {max_est:.3} <= {est_bound:.3}; consensus {worst_z:.2e} <= {:.2e}, reconstructed {worst_rec:.2e} <= {:.2e}; Reg_T/T {:.4}, {:.4}, {:.4}",
            sp.size,
            sp.certified,
            sp.constant,
            linear_consensus_bound(p.arms, p.horizon).max(CONSENSUS_FLOOR),
            reconstructed_consensus_bound(p.arms, p.horizon).max(CONSENSUS_FLOOR),
            slope[0],
            slope[1],
            slope[2]
        ),
    }
}

fn bobw() -> Outcome {
    let t1 = run(BOBW, &[]);
    let t2 = run(BOBW, &[("algorithm.horizon", "320000")]);
    let growth = t2.report.reg_t / t1.report.reg_t - 1.0;
    let adv = [("environment.losses.kind", "iid_uniform")];
    let a1 = run(BOBW, &adv);
    let a4 = run(BOBW, &[adv[0], ("algorithm.horizon", "640000")]);
    let ratio = a4.report.reg_t / a1.report.reg_t;
    let pass = growth <= BOBW_GROWTH_MAX && ratio <= ADVERSARIAL_RATIO_MAX;
    Outcome {
        id: 8,
        name: "best-of-both-worlds regimes",
        pass,
        detail: format!(
            "stochastic Reg_T {:.1} -> {:.1} from T to 2T (growth {growth:.3} <= {BOBW_GROWTH_MAX}); adversarial Reg_4T/Reg_T = {ratio:.3} <= {ADVERSARIAL_RATIO_MAX}",
            t1.report.reg_t, t2.report.reg_t
        ),
    }
}

fn csv_bytes(e: &Experiment) -> Vec<Vec<u8>> {
    e.runs
        .iter()
        .map(|r| {
            let mut buf = Vec::new();
            write_run_csv(r, &mut buf).unwrap();
            buf
        })
        .collect()
}

fn determinism() -> Outcome {
    let edits = [("algorithm.num_seeds", "3"), ("algorithm.horizon", "3000")];
    let a = csv_bytes(&run(KARMED, &edits));
    let b = csv_bytes(&run(KARMED, &edits));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(KARMED, &edits);
    cfg.output.dir = Some(dir.path().to_path_buf());
    gossip_bandits::harness::run_and_write(&cfg).unwrap();
    let on_disk: Vec<Vec<u8>> =
        (0..3).map(|r| std::fs::read(dir.path().join(format!("run_{r:04}.csv"))).unwrap()).collect();
    let pass = a == b && a == on_disk;
    Outcome {
        id: 9,
        name: "byte-identical CSV output",
        pass,
        detail: format!("3 replays, {} bytes per run, two in-memory runs and one written run agree", a[0].len()),
    }
}

fn main() {
    let start = Instant::now();
    let mut outcomes = Vec::new();

    let karmed_5: Vec<Experiment> =
        (1..=5).map(|s| run(KARMED, &[("algorithm.master_seed", &s.to_string())])).collect();
    let karmed_runtime = start.elapsed();
    outcomes.push(consensus(&karmed_5));
    outcomes.push(gossip_decay());
    outcomes.push(unbiasedness());

    let karmed_slope: Vec<Experiment> =
        ["2500", "5000"].iter().map(|t| run(KARMED, &[("algorithm.horizon", t)])).collect();
    let slope: Vec<f64> = karmed_slope.iter().chain(std::iter::once(&karmed_5[0])).map(per_round).collect();
    outcomes.push(regret_bound(&karmed_5[0], &slope));

    let linear: Vec<Experiment> =
        ["2500", "5000", "10000"].iter().map(|t| run(LINEAR, &[("algorithm.horizon", t)])).collect();
    let karmed_refs: Vec<&Experiment> = karmed_5.iter().chain(&karmed_slope).collect();
    let linear_refs: Vec<&Experiment> = linear.iter().collect();
    outcomes.push(ghost(&karmed_refs, &linear_refs));
    outcomes.push(solver_oracle());
    outcomes.push(linear_criterion(&linear));
    outcomes.push(bobw());
    outcomes.push(determinism());

    for o in &outcomes {
        println!("{} criterion {}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    println!("K-armed 5 x 20 replays took {:.2?}; total {:.2?}", karmed_runtime, start.elapsed());
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

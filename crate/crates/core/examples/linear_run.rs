//! Linear bandit over a spanner, from a config file.

use gossip_bandits::harness::{run_and_write, ExperimentConfig};

fn main() -> gossip_bandits::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/linear.toml").into());
    let cfg = ExperimentConfig::load(&path)?;
    let e = run_and_write(&cfg)?;
    let p = &e.params;
    let s = p.spanner.as_ref().expect("linear runs have a spanner");
    println!("d = {:?}, K = {}, B = {}, beta = {:?}", p.dim, p.arms, p.block_len, p.beta);
    println!("spanner {:?}, certified {}", s.members, s.certified);
    println!("Reg_T = {:.2}, Reg_T / T = {:.4}", e.report.reg_t, e.report.reg_t / p.effective_horizon as f64);
    Ok(())
}

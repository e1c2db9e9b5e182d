//! Worst-case tuned K-armed run from a config file.
//!
//! `cargo run --release --example karmed_run -- [config]`

use gossip_bandits::harness::{run_and_write, ExperimentConfig};

fn main() -> gossip_bandits::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/karmed.toml").into());
    let cfg = ExperimentConfig::load(&path)?;
    let e = run_and_write(&cfg)?;
    let p = &e.params;
    println!("N = {}, K = {}, T = {}, B = {}, kappa = {:.4}", p.n_agents, p.arms, p.horizon, p.block_len, p.kappa);
    println!(
        "Reg_T = {:.2} (se {:.2}), bound {:.1}",
        e.report.reg_t,
        e.report.reg_t_se.unwrap_or(0.0),
        e.report.bound.value
    );
    println!("max consensus error {:e}, max ghost ratio {:?}", e.max_consensus_err(), e.max_ghost_ratio());
    Ok(())
}

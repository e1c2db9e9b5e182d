//! Entropy + Tsallis learner on a stochastic and an adversarial instance.

use gossip_bandits::harness::{run_experiment, ExperimentConfig};

fn main() -> gossip_bandits::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/bobw.toml");
    let text = std::fs::read_to_string(path)?;
    for losses in ["kind = \"gap\"\ndelta = 0.25", "kind = \"iid_uniform\""] {
        let cfg = ExperimentConfig::from_toml_str(&format!("{text}\n[environment.losses]\n{losses}\n"))?;
        let e = run_experiment(&cfg)?;
        println!(
            "{:<28} Reg_T = {:>9.2}  gap regret {:?}",
            losses.lines().next().unwrap(),
            e.report.reg_t,
            e.report.gap_regret
        );
    }
    Ok(())
}

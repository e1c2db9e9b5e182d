//! Regret per round as the horizon grows.

use gossip_bandits::harness::sweep;

fn main() -> gossip_bandits::Result<()> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/karmed.toml"))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| gossip_bandits::Error::ConfigInvalid(e.to_string()))?;
    let values: Vec<String> = ["1000", "2000", "4000", "8000"].map(String::from).to_vec();
    for p in sweep(&table, "algorithm.horizon", &values)? {
        println!("T = {:>5}  B = {:>3}  Reg_T / T = {:.3e}", p.horizon, p.block_len, p.reg_per_round);
    }
    Ok(())
}

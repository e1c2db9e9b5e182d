//! Accelerated gossip on a ring versus plain averaging.

use gossip_bandits::gossip::{decay_factor, frobenius_gap, mixing_coefficient, GossipBuffer};
use gossip_bandits::graph::{build_topology, metropolis_weights, spectral_gap, Topology};

fn main() -> gossip_bandits::Result<()> {
    let g = build_topology(&Topology::Ring { n: 12 }, 0)?;
    let w = metropolis_weights(&g)?;
    let s = spectral_gap(&w)?;
    let kappa = mixing_coefficient(s.sigma2)?;
    println!("ring of 12: sigma2 = {:.5}, rho = {:.5}, kappa = {kappa:.5}", s.sigma2, s.rho);

    let x: Vec<Vec<f64>> = (0..12).map(|i| vec![if i == 0 { 12.0 } else { 0.0 }]).collect();
    let mut fast = GossipBuffer::from_vectors(&x)?;
    let mut plain = GossipBuffer::from_vectors(&x)?;
    let start = frobenius_gap(&fast);
    println!("{:>5} {:>12} {:>12} {:>12}", "steps", "accelerated", "plain", "certificate");
    for step in 1..=60 {
        fast.step(&w, kappa)?;
        plain.step(&w, 0.0)?;
        if step % 10 == 0 {
            println!(
                "{step:>5} {:>12.3e} {:>12.3e} {:>12.3e}",
                frobenius_gap(&fast),
                frobenius_gap(&plain),
                decay_factor(s.rho, step) * start
            );
        }
    }
    Ok(())
}

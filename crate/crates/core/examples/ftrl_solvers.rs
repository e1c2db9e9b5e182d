//! FTRL over the simplex with the three potentials.

use gossip_bandits::learners::{kkt_residual, solve, Potential};

fn main() -> gossip_bandits::Result<()> {
    let cum_loss = [12.0, 3.5, 4.0, 30.0];
    let potentials = [
        ("entropy", Potential::Entropy { eta: 0.3 }),
        ("entropy + log-barrier", Potential::LogBarrier { eta: 0.3, gamma: 0.5 }),
        ("entropy + Tsallis", Potential::Tsallis { eta: 0.3, gamma: 0.5 }),
    ];
    for (name, psi) in potentials {
        let sol = solve(&cum_loss, &psi)?;
        let q: Vec<String> = sol.q.iter().map(|x| format!("{x:.5}")).collect();
        println!("{name:<22} q = [{}]  residual {:.1e}", q.join(", "), kkt_residual(&cum_loss, &sol.q, &psi));
    }
    Ok(())
}

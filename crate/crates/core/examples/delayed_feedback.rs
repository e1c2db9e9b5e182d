//! One-block-delayed feedback handled by two interleaved FTRL instances.

use gossip_bandits::learners::{tune_rates, DelayedWrapper, Tuning};

fn main() -> gossip_bandits::Result<()> {
    let (arms, horizon, agents, block) = (3, 2000, 4, 20);
    let reg = tune_rates(Tuning::WorstCase, arms, horizon, agents, block, None)?;
    let mut learner = DelayedWrapper::new(arms, reg)?;
    let losses = [0.7, 0.2, 0.5];
    for tau in 1..=horizon / block {
        let p = learner.query(tau)?;
        if tau % 20 == 0 {
            println!("block {tau:>3}: p = [{:.3}, {:.3}, {:.3}]", p[0], p[1], p[2]);
        }
        if tau > 1 {
            let block_loss: Vec<f64> = losses.iter().map(|l| l * block as f64).collect();
            learner.feed(tau - 1, &block_loss)?;
        }
    }
    Ok(())
}

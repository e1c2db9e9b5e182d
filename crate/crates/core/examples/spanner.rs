//! Volumetric spanner of a random action set.

use gossip_bandits::linear::{compute_spanner, ActionSet, SpannerOptions};

fn main() -> gossip_bandits::Result<()> {
    let omega = ActionSet::random_unit(40, 5, 9)?;
    let s = compute_spanner(&omega, SpannerOptions::default())?;
    let c = s.certificate();
    println!("{} actions in R^{}", omega.arms(), omega.ambient_dim());
    println!("spanner {:?} (size {}, cap {})", s.members(), s.size(), s.size_cap());
    println!("max ||lambda||^2 = {:.6}, certified = {}", c.max_quadratic_form, c.certified);
    Ok(())
}

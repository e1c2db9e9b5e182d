//! Multi-agent adversarial bandits over a gossip network.
//!
//! A set of agents on a connected graph each pull an arm every round and see
//! only their own loss. Agents work in blocks: during a block they average
//! loss estimates from the previous block with accelerated gossip, and at its
//! end they hand the averaged estimate to a full-information learner that
//! tolerates one block of delay. The same pipeline covers `K`-armed bandits
//! and linear bandits, where exploration runs over a volumetric spanner of
//! the action set.
//!
//! Module map:
//! - [`graph`]: communication graphs, gossip matrices, spectral gap.
//! - [`gossip`]: block length, mixing coefficient, gossip buffers.
//! - [`learners`]: FTRL solvers and the delayed-feedback wrapper.
//! - [`karmed`]: `K`-armed agents and loss tensors.
//! - [`linear`]: action sets, spanners, linear agents.
//! - [`env`]: loss and parameter generators.
//! - [`harness`]: configs, experiment runner, regret and diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod gossip;
pub mod graph;
pub mod harness;
pub mod karmed;
pub mod learners;
pub mod linear;
pub mod rng;

pub use error::{Error, Result};

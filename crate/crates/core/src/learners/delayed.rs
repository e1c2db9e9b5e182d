//! One-block feedback delay handled by two interleaved FTRL instances.
//!
//! Block `tau` is played by instance `tau mod 2`. Feedback for block `tau`
//! arrives at the end of block `tau + 1` and goes to the instance that played
//! it, so each instance sees its own history without delay.

use super::ftrl::FtrlState;
use super::regularizer::Regularizer;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DelayedWrapper {
    instances: [FtrlState; 2],
    last_query: usize,
    last_feed: Option<usize>,
}

impl DelayedWrapper {
    pub fn new(arms: usize, regularizer: Regularizer) -> Result<Self> {
        let f = FtrlState::new(arms, regularizer)?;
        Ok(Self { instances: [f.clone(), f], last_query: 0, last_feed: None })
    }

    pub fn arms(&self) -> usize {
        self.instances[0].arms()
    }

    /// The instance that plays block `tau` (`0` for even, `1` for odd).
    pub fn instance(&self, parity: usize) -> &FtrlState {
        &self.instances[parity % 2]
    }

    pub fn last_query(&self) -> usize {
        self.last_query
    }

    pub fn last_feed(&self) -> Option<usize> {
        self.last_feed
    }

    /// Distribution for block `tau`. Blocks are 1-based and must be queried in order,
    /// and from block 3 on the feedback for block `tau - 2` must already be in.
    pub fn query(&mut self, tau: usize) -> Result<Vec<f64>> {
        if tau != self.last_query + 1 {
            return Err(Error::OutOfOrder(format!("queried block {tau} after block {}", self.last_query)));
        }
        if tau >= 3 && self.last_feed != Some(tau - 2) {
            return Err(Error::OutOfOrder(format!("feedback for block {} missing", tau - 2)));
        }
        let q = self.instances[tau % 2].distribution(tau)?;
        self.last_query = tau;
        Ok(q)
    }

    /// Delivers the loss estimate of block `tau`; allowed only while block `tau + 1` is current.
    pub fn feed(&mut self, tau: usize, loss: &[f64]) -> Result<()> {
        if let Some(last) = self.last_feed {
            if tau <= last {
                return Err(Error::DuplicateFeedback(tau));
            }
        }
        if tau == 0 || tau + 1 != self.last_query {
            return Err(Error::OutOfOrder(format!(
                "feedback for block {tau} while block {} is current",
                self.last_query
            )));
        }
        self.instances[tau % 2].observe(loss)?;
        self.last_feed = Some(tau);
        Ok(())
    }
}

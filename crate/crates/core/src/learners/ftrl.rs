use super::regularizer::Regularizer;
use super::solver::{self, SimplexSolution};
use crate::error::{Error, Result};

/// Follow-the-regularized-leader over the `K`-simplex.
#[derive(Debug, Clone)]
pub struct FtrlState {
    cum_loss: Vec<f64>,
    regularizer: Regularizer,
    feedback_count: usize,
    last_solution: Option<SimplexSolution>,
}

impl FtrlState {
    pub fn new(arms: usize, regularizer: Regularizer) -> Result<Self> {
        if arms < 2 {
            return Err(Error::OutOfRange(format!("need at least 2 arms, got {arms}")));
        }
        regularizer.validate()?;
        Ok(Self { cum_loss: vec![0.0; arms], regularizer, feedback_count: 0, last_solution: None })
    }

    pub fn arms(&self) -> usize {
        self.cum_loss.len()
    }

    pub fn cum_loss(&self) -> &[f64] {
        &self.cum_loss
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn feedback_count(&self) -> usize {
        self.feedback_count
    }

    /// Solver diagnostics of the most recent non-trivial query.
    pub fn last_solution(&self) -> Option<&SimplexSolution> {
        self.last_solution.as_ref()
    }

    /// Distribution to play in global block `block`. Uniform before any feedback.
    pub fn distribution(&mut self, block: usize) -> Result<Vec<f64>> {
        let k = self.arms();
        if self.feedback_count == 0 {
            return Ok(vec![1.0 / k as f64; k]);
        }
        let sol = solver::solve(&self.cum_loss, &self.regularizer.at(block))?;
        let q = sol.q.clone();
        self.last_solution = Some(sol);
        Ok(q)
    }

    /// Adds one loss vector to the cumulative loss.
    pub fn observe(&mut self, loss: &[f64]) -> Result<()> {
        if loss.len() != self.arms() {
            return Err(Error::DimMismatch { expected: self.arms(), actual: loss.len() });
        }
        if loss.iter().any(|x| !x.is_finite()) {
            return Err(Error::OutOfRange("loss feedback must be finite".into()));
        }
        for (c, l) in self.cum_loss.iter_mut().zip(loss) {
            *c += l;
        }
        self.feedback_count += 1;
        Ok(())
    }
}

//! Learner-side momentum for the local-momentum baselines.
//!
//! Each learner keeps its own velocity and pushes it; the server adds the
//! pushed velocity to `w` (see [`Payload::Velocity`](super::Payload)).

use super::LearnerId;
use crate::linalg::{DimensionMismatch, ParamVector};
use crate::optim::momentum_step;

/// `v' = alpha * v - eta * g`; returns `(v', payload)` where the payload is `v'`.
pub fn local_momentum_wrap(
    learner_velocity: &ParamVector,
    grad: &ParamVector,
    alpha: f64,
    eta: f64,
) -> Result<(ParamVector, ParamVector), DimensionMismatch> {
    let v = momentum_step(learner_velocity, grad, alpha, eta)?;
    Ok((v.clone(), v))
}

/// Velocities of all learners.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMomentum {
    alpha: f64,
    velocities: Vec<ParamVector>,
}

impl LocalMomentum {
    pub fn new(num_learners: usize, dim: usize, alpha: f64) -> Self {
        Self { alpha, velocities: vec![ParamVector::zeros(dim); num_learners] }
    }

    pub fn velocity(&self, learner: LearnerId) -> &ParamVector {
        &self.velocities[learner.index()]
    }

    /// Folds `grad` into the learner's velocity and returns the payload to push.
    pub fn push(&mut self, learner: LearnerId, grad: &ParamVector, eta: f64) -> Result<ParamVector, DimensionMismatch> {
        let (v, payload) = local_momentum_wrap(&self.velocities[learner.index()], grad, self.alpha, eta)?;
        self.velocities[learner.index()] = v;
        Ok(payload)
    }
}

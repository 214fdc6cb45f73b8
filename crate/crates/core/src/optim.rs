//! Update-rule algebra: momentum, SVRG-corrected gradients and the step-decay schedule.

use serde::{Deserialize, Serialize};

use crate::linalg::{check_len, DimensionMismatch, ParamVector};
use crate::model::{self, Batch, ModelError, ModelSpec};

/// Learning-rate multiplier applied to runs that use no momentum.
pub const NO_MOMENTUM_LR_MULTIPLIER: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub eta0: f64,
    pub alpha: f64,
    /// Epochs (outer loops for SVRG) at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { eta0: 5e-3, alpha: 0.9, decay_epochs: vec![30], decay_factor: 0.5, batch_size: 100 }
    }
}

impl Hyperparams {
    /// Returns the name of the first field that violates its range, with a reason.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(("eta0", format!("must be finite and > 0, got {}", self.eta0)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(("alpha", format!("must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(("decay_factor", format!("must lie in (0, 1], got {}", self.decay_factor)));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(("decay_epochs", "must be strictly increasing".into()));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be positive".into()));
        }
        Ok(())
    }
}

/// Outer-loop anchor of SVRG: the snapshot point and the full gradient there.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgSnapshot {
    pub anchor: ParamVector,
    pub full_grad: ParamVector,
}

impl SvrgSnapshot {
    pub fn new(anchor: ParamVector, full_grad: ParamVector) -> Result<Self, DimensionMismatch> {
        check_len(anchor.len(), full_grad.len())?;
        Ok(Self { anchor, full_grad })
    }
}

/// `v' = alpha * v - eta * g`; the returned velocity is also the parameter delta.
pub fn momentum_step(
    velocity: &ParamVector,
    grad: &ParamVector,
    alpha: f64,
    eta: f64,
) -> Result<ParamVector, DimensionMismatch> {
    check_len(velocity.len(), grad.len())?;
    Ok(velocity
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(&v, &g)| alpha * v - eta * g)
        .collect::<Vec<_>>()
        .into())
}

/// `grad f_k(w, b) - grad f_k(anchor, b) + full_grad`, all evaluated on the same batch.
pub fn svrg_local_gradient(
    spec: &ModelSpec,
    w: &ParamVector,
    snapshot: &SvrgSnapshot,
    batch: &Batch<'_>,
) -> Result<ParamVector, ModelError> {
    check_len(snapshot.full_grad.len(), w.len())?;
    let mut g = model::gradient(spec, w, batch)?;
    let anchor_grad = model::gradient(spec, &snapshot.anchor, batch)?;
    for ((gi, &ai), &fi) in g.as_mut_slice().iter_mut().zip(anchor_grad.as_slice()).zip(snapshot.full_grad.as_slice()) {
        // (g - a) cancels exactly when w is the anchor
        *gi = (*gi - ai) + fi;
    }
    Ok(g)
}

/// Step decay: `eta0 * decay_factor^(number of decay epochs <= epoch)`.
pub fn lr_at(h: &Hyperparams, epoch: usize) -> f64 {
    let decays = h.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    h.eta0 * h.decay_factor.powi(decays as i32)
}

pub fn no_momentum_eta(h: &Hyperparams) -> f64 {
    NO_MOMENTUM_LR_MULTIPLIER * h.eta0
}

/// Server updates that make up one asynchronous epoch: every learner's fair
/// share of one pass over the training data, `ceil(n / (batch * K)) * K`.
pub fn updates_per_epoch(n: usize, batch_size: usize, k: usize) -> u64 {
    (n.div_ceil(batch_size * k) * k) as u64
}

//! Parameter-server policies as sequential state machines.
//!
//! Every server owns the global parameters and a clock counting applied
//! updates. Learners push a payload (a gradient, or a velocity for the
//! local-momentum baselines) and block until the server replies with fresh
//! parameters. A reply is issued exactly when that learner's payload is
//! applied; queued payloads get no reply.
//!
//! Calls must be externally serialized: the simulation engine delivers one
//! gradient at a time.

mod asynchronous;
mod gsgm;
mod local_momentum;
mod ssp;
mod svrg;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{check_len, DimensionMismatch, ParamVector};

pub use asynchronous::AsyncServer;
pub use gsgm::GsgmServer;
pub use local_momentum::{local_momentum_wrap, LocalMomentum};
pub use ssp::{SspServer, Staleness};
pub use svrg::{full_gradient_snapshot, gsgm_svrg_round, Averaging, SvrgError, SvrgLearner};

/// A learner id in `1..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LearnerId(usize);

impl LearnerId {
    /// # Panics
    /// If `k == 0`.
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "learner ids start at 1");
        Self(k)
    }

    /// Learner owning zero-based slot `i`.
    pub fn from_index(i: usize) -> Self {
        Self(i + 1)
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// Zero-based slot, `get() - 1`.
    #[inline]
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn all(k: usize) -> impl Iterator<Item = LearnerId> {
        (1..=k).map(LearnerId)
    }
}

impl fmt::Display for LearnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One applied server update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Server clock after the update; strictly increasing.
    pub clock: u64,
    pub learner: LearnerId,
    /// Norm of the applied direction.
    pub g_unbiased_norm: f64,
    pub eta: f64,
    /// Scheduling round: white-list restorations for GSGM, the slowest
    /// learner's count for SSP, 0 for fully asynchronous servers.
    pub round: u64,
}

/// Fresh parameters sent back to a learner whose payload was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub learner: LearnerId,
    pub params: ParamVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    /// Stop applying updates; the run (or SVRG phase) has reached its end condition.
    Halt,
}

/// Sees every update right after it is applied, with the post-update parameters.
pub trait UpdateObserver {
    fn on_update(&mut self, record: &UpdateRecord, params: &ParamVector) -> Flow;
}

impl UpdateObserver for Vec<UpdateRecord> {
    fn on_update(&mut self, record: &UpdateRecord, _params: &ParamVector) -> Flow {
        self.push(*record);
        Flow::Continue
    }
}

/// Observer that ignores everything.
pub struct Unobserved;

impl UpdateObserver for Unobserved {
    fn on_update(&mut self, _: &UpdateRecord, _: &ParamVector) -> Flow {
        Flow::Continue
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("learner {learner} is outside 1..={num_learners}")]
    UnknownLearner { learner: usize, num_learners: usize },
    #[error("learner {0} pushed a second gradient while one is still pending")]
    DuplicatePending(LearnerId),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

/// What a learner's pushed payload means to the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// A gradient; the server applies `w -= eta * g`.
    Gradient,
    /// A learner-side velocity; the server applies `w += v`.
    Velocity,
}

pub trait Scheduler {
    /// Handles one pushed payload and returns the replies issued while handling it.
    fn on_gradient(
        &mut self,
        learner: LearnerId,
        payload: ParamVector,
        eta: f64,
        observer: &mut dyn UpdateObserver,
    ) -> Result<Vec<Reply>, SchedulerError>;

    /// Applies any work the server would otherwise defer to the next receipt.
    fn flush(&mut self, _eta: f64, _observer: &mut dyn UpdateObserver) -> Vec<Reply> {
        Vec::new()
    }

    /// Drops queued payloads, clears a halt and re-broadcasts `w` to every
    /// learner, e.g. at an SVRG outer-loop barrier.
    fn begin_phase(&mut self);

    fn params(&self) -> &ParamVector;
    fn clock(&self) -> u64;
    fn num_learners(&self) -> usize;
    fn is_halted(&self) -> bool;
    /// Learners whose payload is queued awaiting application.
    fn pending(&self) -> Vec<LearnerId>;
}

/// State shared by every server: parameters, clock, per-learner views.
#[derive(Debug, Clone)]
pub(crate) struct ServerCore {
    pub w: ParamVector,
    pub t: u64,
    pub halted: bool,
    pub learner_view: Vec<ParamVector>,
}

impl ServerCore {
    pub fn new(w0: ParamVector, num_learners: usize) -> Self {
        assert!(num_learners >= 1, "need at least one learner");
        let learner_view = vec![w0.clone(); num_learners];
        Self { w: w0, t: 0, halted: false, learner_view }
    }

    pub fn num_learners(&self) -> usize {
        self.learner_view.len()
    }

    pub fn check(&self, learner: LearnerId, payload: &ParamVector) -> Result<(), SchedulerError> {
        if learner.get() > self.num_learners() {
            return Err(SchedulerError::UnknownLearner {
                learner: learner.get(),
                num_learners: self.num_learners(),
            });
        }
        check_len(self.w.len(), payload.len())?;
        Ok(())
    }

    /// `w += scale * direction`, advances the clock and issues the reply.
    pub fn apply(
        &mut self,
        learner: LearnerId,
        scale: f64,
        direction: &ParamVector,
        eta: f64,
        round: u64,
        observer: &mut dyn UpdateObserver,
    ) -> Reply {
        debug_assert!(!self.halted);
        for (w, &d) in self.w.as_mut_slice().iter_mut().zip(direction.as_slice()) {
            *w += scale * d;
        }
        self.t += 1;
        self.learner_view[learner.index()] = self.w.clone();
        let record = UpdateRecord {
            clock: self.t,
            learner,
            g_unbiased_norm: direction.l2_norm(),
            eta,
            round,
        };
        if observer.on_update(&record, &self.w) == Flow::Halt {
            self.halted = true;
        }
        Reply { learner, params: self.w.clone() }
    }

    /// Clears a halt and re-broadcasts the current parameters to every learner.
    pub fn begin_phase(&mut self) {
        self.halted = false;
        for view in &mut self.learner_view {
            view.clone_from(&self.w);
        }
    }

    /// Multiplier on a plain payload: `-eta` for gradients, `1` for velocities.
    pub fn step_scale(payload: Payload, eta: f64) -> f64 {
        match payload {
            Payload::Gradient => -eta,
            Payload::Velocity => 1.0,
        }
    }
}

//! Bounded-staleness (stale synchronous parallel) server.
//!
//! A learner that has completed `c` updates may apply its next one only while
//! `c - min_j c_j <= threshold`. Otherwise its payload waits; after every
//! applied update the queue is rescanned and the first eligible entry in
//! arrival order goes next.

use std::collections::VecDeque;
use std::fmt;

use super::{LearnerId, Payload, Reply, Scheduler, SchedulerError, ServerCore, UpdateObserver};
use crate::linalg::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Staleness {
    Bounded(u64),
    /// No limit: behaves like the fully asynchronous server.
    Unbounded,
}

impl Staleness {
    fn admits(self, lead: u64) -> bool {
        match self {
            Staleness::Bounded(t) => lead <= t,
            Staleness::Unbounded => true,
        }
    }
}

impl fmt::Display for Staleness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Staleness::Bounded(t) => write!(f, "{t}"),
            Staleness::Unbounded => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SspServer {
    core: ServerCore,
    payload: Payload,
    threshold: Staleness,
    completed: Vec<u64>,
    queue: VecDeque<(LearnerId, ParamVector)>,
}

impl SspServer {
    pub fn new(w0: ParamVector, num_learners: usize, threshold: Staleness, payload: Payload) -> Self {
        Self {
            core: ServerCore::new(w0, num_learners),
            payload,
            threshold,
            completed: vec![0; num_learners],
            queue: VecDeque::new(),
        }
    }

    pub fn threshold(&self) -> Staleness {
        self.threshold
    }

    /// Updates applied so far for `learner`.
    pub fn completed(&self, learner: LearnerId) -> u64 {
        self.completed[learner.index()]
    }

    fn slowest(&self) -> u64 {
        self.completed.iter().copied().min().unwrap_or(0)
    }

    fn eligible(&self, learner: LearnerId) -> bool {
        self.threshold.admits(self.completed[learner.index()] - self.slowest())
    }

    fn apply(&mut self, learner: LearnerId, payload: &ParamVector, eta: f64, observer: &mut dyn UpdateObserver) -> Reply {
        self.completed[learner.index()] += 1;
        let scale = ServerCore::step_scale(self.payload, eta);
        let round = self.slowest();
        self.core.apply(learner, scale, payload, eta, round, observer)
    }
}

impl Scheduler for SspServer {
    fn on_gradient(
        &mut self,
        learner: LearnerId,
        payload: ParamVector,
        eta: f64,
        observer: &mut dyn UpdateObserver,
    ) -> Result<Vec<Reply>, SchedulerError> {
        self.core.check(learner, &payload)?;
        if self.queue.iter().any(|(k, _)| *k == learner) {
            return Err(SchedulerError::DuplicatePending(learner));
        }
        let mut replies = Vec::new();
        if self.core.halted {
            return Ok(replies);
        }
        if !self.eligible(learner) {
            self.queue.push_back((learner, payload));
            return Ok(replies);
        }
        replies.push(self.apply(learner, &payload, eta, observer));
        while !self.core.halted {
            let Some(pos) = self.queue.iter().position(|(k, _)| self.eligible(*k)) else { break };
            let (k, p) = self.queue.remove(pos).expect("position is in range");
            replies.push(self.apply(k, &p, eta, observer));
        }
        Ok(replies)
    }

    fn begin_phase(&mut self) {
        self.queue.clear();
        self.core.begin_phase();
    }

    fn params(&self) -> &ParamVector {
        &self.core.w
    }

    fn clock(&self) -> u64 {
        self.core.t
    }

    fn num_learners(&self) -> usize {
        self.core.num_learners()
    }

    fn is_halted(&self) -> bool {
        self.core.halted
    }

    fn pending(&self) -> Vec<LearnerId> {
        self.queue.iter().map(|(k, _)| *k).collect()
    }
}

//! White-list gradient scheduling with partly averaged gradients and global momentum.
//!
//! A learner whose gradient is applied leaves the white list and cannot update
//! again until every other learner has. Gradients from learners off the list
//! wait in a FIFO queue. When the list is empty the round is over: the mean of
//! the round's applied directions (`g_pa`) becomes the velocity for the next
//! round, the list is restored and the queue drained in arrival order. Each
//! applied direction is `alpha * v + g_k`; `v` only changes at restoration.

use std::collections::VecDeque;

use super::{LearnerId, Reply, Scheduler, SchedulerError, ServerCore, UpdateObserver};
use crate::linalg::ParamVector;

#[derive(Debug, Clone)]
pub struct GsgmServer {
    core: ServerCore,
    alpha: f64,
    velocity: ParamVector,
    partly_averaged: ParamVector,
    whitelist: Vec<bool>,
    whitelist_len: usize,
    wait_queue: VecDeque<(LearnerId, ParamVector)>,
    applied_in_round: Vec<u32>,
    round: u64,
}

impl GsgmServer {
    pub fn new(w0: ParamVector, num_learners: usize, alpha: f64) -> Self {
        let d = w0.len();
        Self {
            core: ServerCore::new(w0, num_learners),
            alpha,
            velocity: ParamVector::zeros(d),
            partly_averaged: ParamVector::zeros(d),
            whitelist: vec![true; num_learners],
            whitelist_len: num_learners,
            wait_queue: VecDeque::new(),
            applied_in_round: vec![0; num_learners],
            round: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Global velocity `v`: the previous round's `g_pa`.
    pub fn velocity(&self) -> &ParamVector {
        &self.velocity
    }

    pub fn partly_averaged(&self) -> &ParamVector {
        &self.partly_averaged
    }

    /// Number of completed white-list restorations.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn in_whitelist(&self, learner: LearnerId) -> bool {
        self.whitelist[learner.index()]
    }

    pub fn whitelist(&self) -> Vec<LearnerId> {
        LearnerId::all(self.whitelist.len()).filter(|&k| self.in_whitelist(k)).collect()
    }

    pub fn queued(&self) -> impl Iterator<Item = LearnerId> + '_ {
        self.wait_queue.iter().map(|(k, _)| *k)
    }

    pub fn applied_in_round(&self, learner: LearnerId) -> u32 {
        self.applied_in_round[learner.index()]
    }

    pub fn learner_view(&self, learner: LearnerId) -> &ParamVector {
        &self.core.learner_view[learner.index()]
    }

    fn apply(&mut self, learner: LearnerId, grad: &ParamVector, eta: f64, observer: &mut dyn UpdateObserver) -> Reply {
        let k = self.whitelist.len() as f64;
        let unbiased: ParamVector = self
            .velocity
            .as_slice()
            .iter()
            .zip(grad.as_slice())
            .map(|(&v, &g)| self.alpha * v + g)
            .collect::<Vec<_>>()
            .into();
        for (pa, &u) in self.partly_averaged.as_mut_slice().iter_mut().zip(unbiased.as_slice()) {
            *pa += u / k;
        }
        self.whitelist[learner.index()] = false;
        self.whitelist_len -= 1;
        self.applied_in_round[learner.index()] += 1;
        self.core.apply(learner, -eta, &unbiased, eta, self.round, observer)
    }

    /// Ends the round: `v = g_pa`, `g_pa = 0`, restore the list, drain the queue.
    fn restore_and_drain(&mut self, eta: f64, observer: &mut dyn UpdateObserver, replies: &mut Vec<Reply>) {
        debug_assert_eq!(self.whitelist_len, 0);
        std::mem::swap(&mut self.velocity, &mut self.partly_averaged);
        self.partly_averaged.fill(0.0);
        self.whitelist.fill(true);
        self.whitelist_len = self.whitelist.len();
        self.applied_in_round.fill(0);
        self.round += 1;
        while !self.core.halted {
            let Some((learner, grad)) = self.wait_queue.pop_front() else { break };
            replies.push(self.apply(learner, &grad, eta, observer));
        }
    }
}

impl Scheduler for GsgmServer {
    fn on_gradient(
        &mut self,
        learner: LearnerId,
        grad: ParamVector,
        eta: f64,
        observer: &mut dyn UpdateObserver,
    ) -> Result<Vec<Reply>, SchedulerError> {
        self.core.check(learner, &grad)?;
        if self.wait_queue.iter().any(|(k, _)| *k == learner) {
            return Err(SchedulerError::DuplicatePending(learner));
        }
        let mut replies = Vec::new();
        if self.core.halted {
            return Ok(replies);
        }
        if self.whitelist_len == 0 {
            self.restore_and_drain(eta, observer, &mut replies);
            if self.core.halted {
                return Ok(replies);
            }
        }
        if self.in_whitelist(learner) {
            replies.push(self.apply(learner, &grad, eta, observer));
        } else {
            self.wait_queue.push_back((learner, grad));
        }
        Ok(replies)
    }

    /// Performs the restoration as soon as the list empties instead of on the
    /// next receipt. The applied sequence is unchanged for any arrival order.
    fn flush(&mut self, eta: f64, observer: &mut dyn UpdateObserver) -> Vec<Reply> {
        let mut replies = Vec::new();
        if self.whitelist_len == 0 && !self.core.halted {
            self.restore_and_drain(eta, observer, &mut replies);
        }
        replies
    }

    fn begin_phase(&mut self) {
        self.wait_queue.clear();
        self.core.begin_phase();
    }

    fn params(&self) -> &ParamVector {
        &self.core.w
    }

    fn clock(&self) -> u64 {
        self.core.t
    }

    fn num_learners(&self) -> usize {
        self.whitelist.len()
    }

    fn is_halted(&self) -> bool {
        self.core.halted
    }

    fn pending(&self) -> Vec<LearnerId> {
        self.queued().collect()
    }
}

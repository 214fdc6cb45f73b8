//! Fully asynchronous server: every push is applied on arrival.

use super::{LearnerId, Payload, Reply, Scheduler, SchedulerError, ServerCore, UpdateObserver};
use crate::linalg::ParamVector;

#[derive(Debug, Clone)]
pub struct AsyncServer {
    core: ServerCore,
    payload: Payload,
}

impl AsyncServer {
    pub fn new(w0: ParamVector, num_learners: usize, payload: Payload) -> Self {
        Self { core: ServerCore::new(w0, num_learners), payload }
    }

    pub fn payload(&self) -> Payload {
        self.payload
    }
}

impl Scheduler for AsyncServer {
    fn on_gradient(
        &mut self,
        learner: LearnerId,
        payload: ParamVector,
        eta: f64,
        observer: &mut dyn UpdateObserver,
    ) -> Result<Vec<Reply>, SchedulerError> {
        self.core.check(learner, &payload)?;
        if self.core.halted {
            return Ok(Vec::new());
        }
        let scale = ServerCore::step_scale(self.payload, eta);
        Ok(vec![self.core.apply(learner, scale, &payload, eta, 0, observer)])
    }

    fn begin_phase(&mut self) {
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
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{GsgmServer, UpdateRecord};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn single_gradient_step() {
        let mut s = AsyncServer::new(pv(&[0.0]), 1, Payload::Gradient);
        let replies = s.on_gradient(LearnerId::new(1), pv(&[1.0]), 0.1, &mut Vec::new()).unwrap();
        assert_eq!(replies, vec![Reply { learner: LearnerId::new(1), params: pv(&[-0.1]) }]);
        assert_eq!(s.clock(), 1);
    }

    #[test]
    fn velocity_payload_is_added() {
        let mut s = AsyncServer::new(pv(&[1.0, 1.0]), 2, Payload::Velocity);
        s.on_gradient(LearnerId::new(2), pv(&[-0.25, 0.5]), 0.1, &mut Vec::new()).unwrap();
        assert_eq!(s.params(), &pv(&[0.75, 1.5]));
    }

    #[test]
    fn alternating_arrivals_match_memoryless_gsgm() {
        let grads = [[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5], [1.0, 1.0], [0.0, -3.0], [4.0, 0.5]];
        let mut a = AsyncServer::new(pv(&[0.1, 0.2]), 2, Payload::Gradient);
        let mut g = GsgmServer::new(pv(&[0.1, 0.2]), 2, 0.0);
        let (mut la, mut lg): (Vec<UpdateRecord>, Vec<UpdateRecord>) = (Vec::new(), Vec::new());
        for (i, grad) in grads.iter().enumerate() {
            let k = LearnerId::from_index(i % 2);
            a.on_gradient(k, pv(grad), 0.05, &mut la).unwrap();
            g.on_gradient(k, pv(grad), 0.05, &mut lg).unwrap();
            g.flush(0.05, &mut lg);
            assert_eq!(a.params(), g.params());
        }
        let learners = |l: &[UpdateRecord]| l.iter().map(|r| r.learner).collect::<Vec<_>>();
        assert_eq!(learners(&la), learners(&lg));
    }
}

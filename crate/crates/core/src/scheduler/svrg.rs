//! One outer loop of GSGM-SVRG: a synchronous full-gradient snapshot followed
//! by an asynchronous phase of variance-reduced gradients scheduled by GSGM.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Flow, GsgmServer, LearnerId, Scheduler, SchedulerError, UpdateObserver, UpdateRecord};
use crate::data::{sample_batch, DataError, Dataset, Shard};
use crate::linalg::ParamVector;
use crate::model::{self, ModelError, ModelSpec};
use crate::optim::{svrg_local_gradient, SvrgSnapshot};

/// How per-shard full gradients are combined into the snapshot gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Weight shard `k` by `n_k / n`, the exact full-data gradient.
    #[default]
    Weighted,
    /// Plain mean over learners.
    Uniform,
}

#[derive(Debug, Error)]
pub enum SvrgError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("every learner is blocked but the phase has not finished")]
    Stalled,
}

/// Full gradient of the objective at `w`, computed shard by shard.
pub fn full_gradient_snapshot(
    spec: &ModelSpec,
    dataset: &Dataset,
    shards: &[Shard],
    w: &ParamVector,
    averaging: Averaging,
) -> Result<SvrgSnapshot, ModelError> {
    let per_shard: Vec<ParamVector> = shards
        .par_iter()
        .map(|s| model::gradient(spec, w, &s.full_batch(dataset)?))
        .collect::<Result<_, _>>()?;
    let n: usize = shards.iter().map(Shard::len).sum();
    let mut full = ParamVector::zeros(w.len());
    for (shard, g) in shards.iter().zip(&per_shard) {
        let weight = match averaging {
            Averaging::Weighted => shard.len() as f64 / n as f64,
            Averaging::Uniform => 1.0 / shards.len() as f64,
        };
        full.axpy_assign(weight, g)?;
    }
    Ok(SvrgSnapshot::new(w.clone(), full)?)
}

/// Learner-side work for the SVRG policies.
#[derive(Debug, Clone, Copy)]
pub struct SvrgLearner<'a> {
    pub spec: &'a ModelSpec,
    pub dataset: &'a Dataset,
    pub batch_size: usize,
}

impl SvrgLearner<'_> {
    /// Samples a batch from `shard` and returns the corrected gradient at `w`.
    pub fn gradient<R: Rng + ?Sized>(
        &self,
        shard: &Shard,
        w: &ParamVector,
        snapshot: &SvrgSnapshot,
        rng: &mut R,
    ) -> Result<ParamVector, SvrgError> {
        let batch = sample_batch(shard, self.dataset, self.batch_size, rng)?;
        Ok(svrg_local_gradient(self.spec, w, snapshot, &batch)?)
    }
}

/// Halts after `limit` updates, forwarding everything to `inner`.
struct PhaseLimit<'o> {
    applied: u64,
    limit: u64,
    inner: &'o mut dyn UpdateObserver,
}

impl UpdateObserver for PhaseLimit<'_> {
    fn on_update(&mut self, record: &UpdateRecord, params: &ParamVector) -> Flow {
        self.applied += 1;
        let flow = self.inner.on_update(record, params);
        if self.applied >= self.limit {
            Flow::Halt
        } else {
            flow
        }
    }
}

/// Runs one outer loop on `server` until each learner has had `inner_iters`
/// corrected gradients applied. `order` sees the learners able to push (those
/// not waiting in the queue) and picks the next arrival. Returns the snapshot.
#[allow(clippy::too_many_arguments)]
pub fn gsgm_svrg_round<R: Rng>(
    server: &mut GsgmServer,
    learner: SvrgLearner<'_>,
    shards: &[Shard],
    eta: f64,
    averaging: Averaging,
    inner_iters: u64,
    rngs: &mut [R],
    order: &mut dyn FnMut(&[LearnerId]) -> LearnerId,
    observer: &mut dyn UpdateObserver,
) -> Result<SvrgSnapshot, SvrgError> {
    assert!(inner_iters >= 1, "inner_iters must be positive");
    server.begin_phase();
    let snapshot = full_gradient_snapshot(learner.spec, learner.dataset, shards, server.params(), averaging)?;
    let k = server.num_learners();
    let mut limit = PhaseLimit { applied: 0, limit: inner_iters * k as u64, inner: observer };
    while !server.is_halted() {
        let pending = server.pending();
        let free: Vec<LearnerId> = LearnerId::all(k).filter(|j| !pending.contains(j)).collect();
        if free.is_empty() {
            return Err(SvrgError::Stalled);
        }
        let j = order(&free);
        let g = learner.gradient(&shards[j.index()], server.learner_view(j), &snapshot, &mut rngs[j.index()])?;
        server.on_gradient(j, g, eta, &mut limit)?;
        server.flush(eta, &mut limit);
    }
    Ok(snapshot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, partition_noniid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize) -> (ModelSpec, Dataset, Vec<Shard>) {
        let d = generate_synthetic(3, 20, 4, 2.0, 7).unwrap();
        let shards = partition_noniid(&d, k, 0).unwrap();
        (ModelSpec::softmax(4, 3), d, shards)
    }

    #[test]
    fn weighted_snapshot_is_the_full_data_gradient() {
        let (spec, d, _) = setup(1);
        // uneven shards: 60 examples over 7 learners
        let shards = partition_noniid(&d, 7, 0).unwrap();
        let w = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let snap = full_gradient_snapshot(&spec, &d, &shards, &w, Averaging::Weighted).unwrap();
        let all: Vec<usize> = (0..d.len()).collect();
        let direct = model::gradient(&spec, &w, &d.batch(&all).unwrap()).unwrap();
        for i in 0..w.len() {
            assert!((snap.full_grad[i] - direct[i]).abs() < 1e-14);
        }
        assert_eq!(snap.anchor, w);
    }

    #[test]
    fn uniform_and_weighted_agree_on_equal_shards() {
        let (spec, d, shards) = setup(3);
        let w = spec.init_params(&mut ChaCha8Rng::seed_from_u64(4));
        let a = full_gradient_snapshot(&spec, &d, &shards, &w, Averaging::Weighted).unwrap();
        let b = full_gradient_snapshot(&spec, &d, &shards, &w, Averaging::Uniform).unwrap();
        for i in 0..w.len() {
            assert!((a.full_grad[i] - b.full_grad[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn whole_shard_batches_at_the_anchor_return_the_full_gradient() {
        let (spec, d, shards) = setup(3);
        let w = spec.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        let snap = full_gradient_snapshot(&spec, &d, &shards, &w, Averaging::Weighted).unwrap();
        let learner = SvrgLearner { spec: &spec, dataset: &d, batch_size: shards[0].len() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in &shards {
            assert_eq!(learner.gradient(s, &w, &snap, &mut rng).unwrap(), snap.full_grad);
        }
    }

    #[test]
    fn round_gives_every_learner_its_inner_iterations() {
        let (spec, d, shards) = setup(3);
        let w0 = spec.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let mut server = GsgmServer::new(w0, 3, 0.9);
        let learner = SvrgLearner { spec: &spec, dataset: &d, batch_size: 5 };
        let mut rngs: Vec<ChaCha8Rng> = (0..3).map(ChaCha8Rng::seed_from_u64).collect();
        let mut pick = ChaCha8Rng::seed_from_u64(9);
        let mut order = |free: &[LearnerId]| free[pick.random_range(0..free.len())];
        let mut log: Vec<UpdateRecord> = Vec::new();
        for outer in 0..4 {
            gsgm_svrg_round(&mut server, learner, &shards, 0.05, Averaging::Weighted, 4, &mut rngs, &mut order, &mut log)
                .unwrap();
            assert_eq!(log.len(), 12 * (outer + 1));
            for k in LearnerId::all(3) {
                let n = log[12 * outer..].iter().filter(|r| r.learner == k).count();
                assert_eq!(n, 4);
            }
        }
        assert_eq!(server.clock(), 48);
        assert!(server.params().is_finite());
    }

    #[test]
    fn first_inner_update_follows_the_full_gradient() {
        let (spec, d, shards) = setup(2);
        let w0 = spec.init_params(&mut ChaCha8Rng::seed_from_u64(2));
        let mut server = GsgmServer::new(w0.clone(), 2, 0.9);
        let learner = SvrgLearner { spec: &spec, dataset: &d, batch_size: shards[0].len() };
        let mut rngs: Vec<ChaCha8Rng> = (0..2).map(ChaCha8Rng::seed_from_u64).collect();
        let mut log: Vec<UpdateRecord> = Vec::new();
        let snap = gsgm_svrg_round(&mut server, learner, &shards, 0.1, Averaging::Weighted, 1, &mut rngs, &mut |f| f[0], &mut log)
            .unwrap();
        assert_eq!(log[0].g_unbiased_norm, snap.full_grad.l2_norm());
    }
}

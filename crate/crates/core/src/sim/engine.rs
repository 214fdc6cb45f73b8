//! Learners, server and clock wired together.
//!
//! A learner computes its next payload the moment the server replies to it,
//! against the parameters in the reply. The event loop only decides *when*
//! that payload arrives, so [`replay`] can rebuild every update from the
//! recorded arrival order alone.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::event::{next_event, EventError, EventKind, EventQueue};
use super::trace::TraceRow;
use crate::config::{ConfigError, DatasetConfig, ExperimentConfig, Policy};
use crate::data::{load_idx, partition_noniid, partition_partial, sample_batch, DataError, Dataset, Shard};
use crate::linalg::{DimensionMismatch, ParamVector};
use crate::metrics::{EpochAccuracy, MetricsError, RunResult};
use crate::model::{self, ModelError, ModelKind, ModelSpec};
use crate::optim::{lr_at, no_momentum_eta, updates_per_epoch, Hyperparams, SvrgSnapshot};
use crate::scheduler::{
    full_gradient_snapshot, AsyncServer, Flow, GsgmServer, LearnerId, LocalMomentum, Scheduler, SchedulerError,
    SspServer, SvrgError, SvrgLearner, UpdateObserver, UpdateRecord,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no learner can make progress at time {0}")]
    Stalled(f64),
    #[error("learner {0} has no payload ready to push")]
    NoPayload(LearnerId),
}

impl From<SvrgError> for SimError {
    fn from(e: SvrgError) -> Self {
        match e {
            SvrgError::Model(e) => e.into(),
            SvrgError::Data(e) => e.into(),
            SvrgError::Scheduler(e) => e.into(),
            SvrgError::Stalled => SimError::Stalled(f64::NAN),
        }
    }
}

const STREAM_DATA: u64 = 0;
const STREAM_PARTITION: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_BATCH: u64 = 1 << 20;
const STREAM_SPEED: u64 = 2 << 20;

/// Independent generator for one purpose, all derived from the run seed.
fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything a run needs before the first event: data, shards, `w0`.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<Shard>,
    pub w0: ParamVector,
    /// Server updates per epoch (see [`updates_per_epoch`]).
    pub per_epoch: u64,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Setup, SimError> {
    let mut config = config.clone();
    config.normalize()?;
    let seed = config.seed;
    let (train, test) = match &config.dataset {
        DatasetConfig::Synthetic(s) => s.generate(substream(seed, STREAM_DATA).next_u64())?,
        DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => {
            (load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?)
        }
    };
    if train.input_dim() != test.input_dim() {
        return Err(ConfigError::invalid(
            "dataset",
            format!("train inputs have {} features, test inputs {}", train.input_dim(), test.input_dim()),
        )
        .into());
    }
    let num_classes = train.num_classes().max(test.num_classes());
    let spec = match config.model.kind {
        ModelKind::SoftmaxRegression => ModelSpec::softmax(train.input_dim(), num_classes),
        ModelKind::Mlp1 => ModelSpec::mlp1(train.input_dim(), config.model.hidden_dim, num_classes),
    };
    spec.validate()?;
    let k = config.k;
    let shards = if config.noniid_fraction == 1.0 {
        partition_noniid(&train, k, seed)?
    } else {
        partition_partial(&train, k, config.noniid_fraction, substream(seed, STREAM_PARTITION).next_u64())?
    };
    let smallest = shards.iter().map(Shard::len).min().unwrap_or(0);
    if config.hyperparams.batch_size > smallest {
        return Err(ConfigError::invalid(
            "hyperparams.batch_size",
            format!("{} exceeds the smallest shard ({smallest} examples)", config.hyperparams.batch_size),
        )
        .into());
    }
    let w0 = spec.init_params(&mut substream(seed, STREAM_INIT));
    let per_epoch = updates_per_epoch(train.len(), config.hyperparams.batch_size, k);
    Ok(Setup { config, spec, train, test, shards, w0, per_epoch })
}

/// Records updates, evaluates accuracy at every epoch boundary and halts the
/// server at the end of the current phase.
struct Monitor<'s> {
    spec: &'s ModelSpec,
    test: &'s Dataset,
    per_epoch: u64,
    halt_epoch: usize,
    now: f64,
    series: Vec<EpochAccuracy>,
    trace: Vec<TraceRow>,
    records: Vec<UpdateRecord>,
    error: Option<ModelError>,
}

impl UpdateObserver for Monitor<'_> {
    fn on_update(&mut self, record: &UpdateRecord, params: &ParamVector) -> Flow {
        self.records.push(*record);
        self.trace.push(TraceRow::update(self.now, record));
        if !record.clock.is_multiple_of(self.per_epoch) {
            return Flow::Continue;
        }
        let epoch = (record.clock / self.per_epoch) as usize;
        match model::accuracy(self.spec, params, self.test) {
            Ok(acc) => {
                self.series.push(EpochAccuracy { epoch, accuracy: acc });
                self.trace.push(TraceRow::epoch(self.now, record.clock, acc));
            }
            Err(e) => {
                self.error = Some(e);
                return Flow::Halt;
            }
        }
        if epoch >= self.halt_epoch {
            Flow::Halt
        } else {
            Flow::Continue
        }
    }
}

fn build_server(policy: Policy, w0: ParamVector, k: usize, alpha: f64) -> Box<dyn Scheduler + Send> {
    match policy {
        Policy::Gsgm | Policy::GsgmSvrg => Box::new(GsgmServer::new(w0, k, alpha)),
        Policy::Async | Policy::AsyncLm | Policy::Asvrg => Box::new(AsyncServer::new(w0, k, policy.payload())),
        Policy::Ssp(t) | Policy::SspLm(t) | Policy::Dvrg(t) => Box::new(SspServer::new(w0, k, t, policy.payload())),
    }
}

/// Server plus learner state, independent of timing.
struct Cluster<'s> {
    setup: &'s Setup,
    server: Box<dyn Scheduler + Send>,
    hyper: Hyperparams,
    momentum: Option<LocalMomentum>,
    batch_rngs: Vec<ChaCha8Rng>,
    payloads: Vec<Option<ParamVector>>,
    snapshot: Option<SvrgSnapshot>,
    phase: usize,
    monitor: Monitor<'s>,
}

impl<'s> Cluster<'s> {
    fn new(setup: &'s Setup) -> Self {
        let c = &setup.config;
        let mut hyper = c.hyperparams.clone();
        if !c.policy.uses_momentum() {
            hyper.eta0 = no_momentum_eta(&c.hyperparams);
        }
        let momentum = c.policy.is_local_momentum().then(|| LocalMomentum::new(c.k, setup.w0.len(), hyper.alpha));
        Self {
            setup,
            server: build_server(c.policy, setup.w0.clone(), c.k, hyper.alpha),
            hyper,
            momentum,
            batch_rngs: (0..c.k as u64).map(|j| substream(c.seed, STREAM_BATCH + j)).collect(),
            payloads: vec![None; c.k],
            snapshot: None,
            phase: 0,
            monitor: Monitor {
                spec: &setup.spec,
                test: &setup.test,
                per_epoch: setup.per_epoch,
                halt_epoch: c.total_epochs(),
                now: 0.0,
                series: Vec::new(),
                trace: Vec::new(),
                records: Vec::new(),
                error: None,
            },
        }
    }

    fn num_phases(&self) -> usize {
        self.setup.config.outer_loops.filter(|_| self.setup.config.policy.is_svrg()).unwrap_or(1)
    }

    /// Step size for the next server call: decays by epoch, or by outer loop for SVRG.
    fn eta(&self) -> f64 {
        let epoch = if self.snapshot.is_some() {
            self.phase
        } else {
            (self.server.clock() / self.setup.per_epoch) as usize
        };
        lr_at(&self.hyper, epoch)
    }

    fn halted(&self) -> bool {
        self.server.is_halted()
    }

    fn check_monitor(&mut self) -> Result<(), SimError> {
        match self.monitor.error.take() {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }

    /// Starts phase `phase`: for SVRG takes the snapshot at the current `w`;
    /// every learner then begins from the server's parameters.
    fn start_phase(&mut self, phase: usize) -> Result<(), SimError> {
        let s = self.setup;
        self.phase = phase;
        if s.config.policy.is_svrg() {
            self.server.begin_phase();
            let snap = full_gradient_snapshot(&s.spec, &s.train, &s.shards, self.server.params(), s.config.averaging)?;
            let inner = s.config.inner_loops.expect("normalized SVRG config has inner_loops");
            self.monitor.halt_epoch = (phase + 1) * inner;
            self.monitor.trace.push(TraceRow::snapshot(self.monitor.now, self.server.clock(), snap.full_grad.l2_norm()));
            self.snapshot = Some(snap);
        }
        let w = self.server.params().clone();
        for k in LearnerId::all(s.config.k) {
            self.prepare_payload(k, &w)?;
        }
        Ok(())
    }

    fn prepare_payload(&mut self, k: LearnerId, params: &ParamVector) -> Result<(), SimError> {
        let s = self.setup;
        let shard = &s.shards[k.index()];
        let rng = &mut self.batch_rngs[k.index()];
        let grad = match &self.snapshot {
            Some(snap) => {
                SvrgLearner { spec: &s.spec, dataset: &s.train, batch_size: s.config.hyperparams.batch_size }
                    .gradient(shard, params, snap, rng)?
            }
            None => model::gradient(&s.spec, params, &sample_batch(shard, &s.train, s.config.hyperparams.batch_size, rng)?)?,
        };
        let eta = self.eta();
        let payload = match &mut self.momentum {
            Some(lm) => lm.push(k, &grad, eta)?,
            None => grad,
        };
        self.payloads[k.index()] = Some(payload);
        Ok(())
    }

    /// Delivers `k`'s payload to the server; returns the learners that got replies.
    fn arrive(&mut self, k: LearnerId, now: f64) -> Result<Vec<LearnerId>, SimError> {
        let payload = self.payloads.get_mut(k.index()).and_then(Option::take).ok_or(SimError::NoPayload(k))?;
        self.monitor.now = now;
        self.monitor.trace.push(TraceRow::arrive(now, k, self.server.clock()));
        let eta = self.eta();
        let mut replies = self.server.on_gradient(k, payload, eta, &mut self.monitor)?;
        let eta = self.eta();
        replies.extend(self.server.flush(eta, &mut self.monitor));
        self.check_monitor()?;
        let mut learners = Vec::with_capacity(replies.len());
        for r in replies {
            self.prepare_payload(r.learner, &r.params)?;
            learners.push(r.learner);
        }
        Ok(learners)
    }

    fn finish(self, simulated_time: f64) -> Result<RunOutput, SimError> {
        let total_updates = self.server.clock();
        let final_params = self.server.params().clone();
        let Monitor { series, trace, records, .. } = self.monitor;
        let result = RunResult::from_series(series, total_updates, simulated_time, self.setup.config.clone())?;
        Ok(RunOutput { result, trace, records, final_params })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub trace: Vec<TraceRow>,
    pub records: Vec<UpdateRecord>,
    pub final_params: ParamVector,
}

/// Runs the discrete-event simulation to completion.
pub fn simulate(setup: &Setup) -> Result<RunOutput, SimError> {
    let c = &setup.config;
    let sampler = c.speed_model.sampler(c.k).map_err(|(f, r)| ConfigError::invalid(format!("speed_model.{f}"), r))?;
    let mut speed_rngs: Vec<ChaCha8Rng> = (0..c.k as u64).map(|j| substream(c.seed, STREAM_SPEED + j)).collect();
    let mut cluster = Cluster::new(setup);
    let mut queue = EventQueue::new();
    for phase in 0..cluster.num_phases() {
        cluster.monitor.now = queue.now();
        cluster.start_phase(phase)?;
        queue.clear();
        let mut start = queue.now();
        if c.policy.is_svrg() {
            // every learner passes over its whole shard; the slowest sets the pace
            let batches = |k: LearnerId| setup.shards[k.index()].len() as f64 / c.hyperparams.batch_size as f64;
            let sync = LearnerId::all(c.k)
                .map(|k| sampler.sample(k, &mut speed_rngs[k.index()]) * batches(k))
                .fold(0.0, f64::max);
            start += sync;
        }
        for k in LearnerId::all(c.k) {
            queue.push(start + c.latency, EventKind::ParamsDelivered, k)?;
        }
        while !cluster.halted() {
            let ev = next_event(&mut queue).map_err(|e| match e {
                EventError::Empty => SimError::Stalled(queue.now()),
                e => e.into(),
            })?;
            match ev.kind {
                EventKind::ParamsDelivered => {
                    let dt = sampler.sample(ev.learner, &mut speed_rngs[ev.learner.index()]);
                    queue.push(ev.time + dt, EventKind::GradientReady, ev.learner)?;
                }
                EventKind::GradientReady => {
                    for j in cluster.arrive(ev.learner, ev.time)? {
                        queue.push(ev.time + c.latency, EventKind::ParamsDelivered, j)?;
                    }
                }
                EventKind::EpochBoundary => {}
            }
        }
    }
    let now = queue.now();
    cluster.finish(now)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, SimError> {
    simulate(&prepare(config)?)
}

/// Feeds a recorded arrival order straight into the server, skipping the
/// clock. Arrivals past the end of the run are ignored.
pub fn replay(setup: &Setup, arrivals: &[LearnerId]) -> Result<RunOutput, SimError> {
    let mut cluster = Cluster::new(setup);
    let phases = cluster.num_phases();
    let mut phase = 0;
    cluster.start_phase(0)?;
    for &k in arrivals {
        if cluster.halted() {
            phase += 1;
            if phase == phases {
                break;
            }
            cluster.start_phase(phase)?;
        }
        if k.get() > setup.config.k {
            return Err(SchedulerError::UnknownLearner { learner: k.get(), num_learners: setup.config.k }.into());
        }
        cluster.arrive(k, 0.0)?;
    }
    cluster.finish(0.0)
}

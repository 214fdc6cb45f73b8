//! Small classifiers with analytic gradients.
//!
//! Parameter layout (flat, row-major):
//!
//! * `softmax_regression`: `W` (`num_classes x input_dim`), then `b` (`num_classes`).
//! * `mlp1`: `W1` (`hidden_dim x input_dim`), `b1` (`hidden_dim`),
//!   `W2` (`num_classes x hidden_dim`), `b2` (`num_classes`). Hidden units use `tanh`.
//!
//! Loss is mean cross-entropy over the batch.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::linalg::{check_len, DimensionMismatch, ParamVector};

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("cannot evaluate on an empty dataset")]
    EmptyDataset,
    #[error("batch must contain at least one example and as many labels as feature vectors")]
    MalformedBatch,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn softmax(input_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::SoftmaxRegression, input_dim, hidden_dim: 0, num_classes }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::Mlp1, input_dim, hidden_dim, num_classes }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidSpec("input_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec("num_classes must be at least 2"));
        }
        match self.kind {
            ModelKind::SoftmaxRegression if self.hidden_dim != 0 => {
                Err(ModelError::InvalidSpec("softmax_regression has no hidden layer"))
            }
            ModelKind::Mlp1 if self.hidden_dim == 0 => {
                Err(ModelError::InvalidSpec("mlp1 needs hidden_dim > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn num_params(&self) -> usize {
        match self.kind {
            ModelKind::SoftmaxRegression => (self.input_dim + 1) * self.num_classes,
            ModelKind::Mlp1 => {
                (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_classes
            }
        }
    }

    /// Offset and length of the weights-then-bias block that produces logits.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        match self.kind {
            ModelKind::SoftmaxRegression => 0..self.num_params(),
            ModelKind::Mlp1 => {
                let start = (self.input_dim + 1) * self.hidden_dim;
                start..self.num_params()
            }
        }
    }

    /// Uniform initialization in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        (0..self.num_params())
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect::<Vec<_>>()
            .into()
    }
}

/// A borrowed mini-batch of labelled examples.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    features: Vec<&'a [f64]>,
    labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(features: Vec<&'a [f64]>, labels: Vec<usize>) -> Result<Self, ModelError> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(ModelError::MalformedBatch);
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[&'a [f64]] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn iter(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        self.features.iter().copied().zip(self.labels.iter().copied())
    }
}

fn check_inputs(spec: &ModelSpec, w: &ParamVector, batch: &Batch<'_>) -> Result<(), ModelError> {
    check_len(spec.num_params(), w.len())?;
    for (x, y) in batch.iter() {
        check_len(spec.input_dim, x.len())?;
        if y >= spec.num_classes {
            return Err(ModelError::LabelOutOfRange { label: y, num_classes: spec.num_classes });
        }
    }
    Ok(())
}

/// `out = W x + b` for a row-major `rows x x.len()` matrix followed by `rows` biases.
fn affine(params: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    let rows = out.len();
    let (weights, bias) = params.split_at(rows * cols);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weights[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[r];
    }
}

/// Accumulates `scale * delta x^T` into the weights and `scale * delta` into the bias.
fn affine_grad_accumulate(grad: &mut [f64], x: &[f64], delta: &[f64], scale: f64) {
    let cols = x.len();
    let rows = delta.len();
    let (gw, gb) = grad.split_at_mut(rows * cols);
    for (r, &d) in delta.iter().enumerate() {
        let s = scale * d;
        for (g, &xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *g += s * xi;
        }
        gb[r] += s;
    }
}

struct Forward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Forward {
    fn new(spec: &ModelSpec) -> Self {
        Self { hidden: vec![0.0; spec.hidden_dim], logits: vec![0.0; spec.num_classes] }
    }

    fn run(&mut self, spec: &ModelSpec, w: &[f64], x: &[f64]) {
        match spec.kind {
            ModelKind::SoftmaxRegression => affine(w, x, &mut self.logits),
            ModelKind::Mlp1 => {
                let split = (spec.input_dim + 1) * spec.hidden_dim;
                affine(&w[..split], x, &mut self.hidden);
                for h in &mut self.hidden {
                    *h = h.tanh();
                }
                affine(&w[split..], &self.hidden, &mut self.logits);
            }
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

pub fn logits(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_len(spec.num_params(), w.len())?;
    check_len(spec.input_dim, x.len())?;
    let mut fwd = Forward::new(spec);
    fwd.run(spec, w.as_slice(), x);
    Ok(fwd.logits)
}

/// Mean cross-entropy of the batch.
pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: &Batch<'_>) -> Result<f64, ModelError> {
    check_inputs(spec, w, batch)?;
    let mut fwd = Forward::new(spec);
    let mut total = 0.0;
    for (x, y) in batch.iter() {
        fwd.run(spec, w.as_slice(), x);
        total += log_sum_exp(&fwd.logits) - fwd.logits[y];
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`loss`] with respect to `w`.
pub fn gradient(spec: &ModelSpec, w: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector, ModelError> {
    check_inputs(spec, w, batch)?;
    let params = w.as_slice();
    let mut grad = vec![0.0; spec.num_params()];
    let mut fwd = Forward::new(spec);
    let mut delta = vec![0.0; spec.num_classes];
    let mut hidden_delta = vec![0.0; spec.hidden_dim];
    let inv_n = 1.0 / batch.len() as f64;

    for (x, y) in batch.iter() {
        fwd.run(spec, params, x);
        let lse = log_sum_exp(&fwd.logits);
        for (d, &z) in delta.iter_mut().zip(&fwd.logits) {
            *d = (z - lse).exp();
        }
        delta[y] -= 1.0;

        match spec.kind {
            ModelKind::SoftmaxRegression => affine_grad_accumulate(&mut grad, x, &delta, inv_n),
            ModelKind::Mlp1 => {
                let split = (spec.input_dim + 1) * spec.hidden_dim;
                let h = spec.hidden_dim;
                let w2 = &params[split..split + spec.num_classes * h];
                for (j, hd) in hidden_delta.iter_mut().enumerate() {
                    let back: f64 = delta.iter().enumerate().map(|(c, d)| w2[c * h + j] * d).sum();
                    *hd = back * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                }
                let (g1, g2) = grad.split_at_mut(split);
                affine_grad_accumulate(g2, &fwd.hidden, &delta, inv_n);
                affine_grad_accumulate(g1, x, &hidden_delta, inv_n);
            }
        }
    }
    Ok(grad.into())
}

/// Fraction of `dataset` classified correctly by argmax of the logits.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, dataset: &Dataset) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    check_len(spec.num_params(), w.len())?;
    check_len(spec.input_dim, dataset.input_dim())?;
    let mut fwd = Forward::new(spec);
    let correct = (0..dataset.len())
        .filter(|&i| {
            let (x, y) = dataset.example(i);
            fwd.run(spec, w.as_slice(), x);
            argmax(&fwd.logits) == y
        })
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (xs, ys)
    }

    fn borrow(xs: &[Vec<f64>], ys: &[usize]) -> Batch<'static> {
        // tests leak small fixtures to get a 'static batch
        let xs: &'static [Vec<f64>] = Box::leak(xs.to_vec().into_boxed_slice());
        Batch::new(xs.iter().map(|x| x.as_slice()).collect(), ys.to_vec()).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelSpec::softmax(20, 10).num_params(), 210);
        assert_eq!(ModelSpec::mlp1(4, 3, 2).num_params(), 5 * 3 + 4 * 2);
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [ModelSpec::softmax(5, 7), ModelSpec::mlp1(5, 4, 10)] {
            let (xs, ys) = random_batch(&mut rng, 8, 5, spec.num_classes);
            let w = ParamVector::zeros(spec.num_params());
            let l = loss(&spec, &w, &borrow(&xs, &ys)).unwrap();
            assert!((l - (spec.num_classes as f64).ln()).abs() < 1e-12);
        }
        let l = loss(
            &ModelSpec::mlp1(2, 3, 10),
            &ParamVector::zeros(ModelSpec::mlp1(2, 3, 10).num_params()),
            &borrow(&[vec![1.0, 2.0]], &[4]),
        )
        .unwrap();
        assert!((l - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let spec = ModelSpec::softmax(1, 2);
        // logits: class0 = 0, class1 = 20 for x = [1]
        let w = ParamVector::from_vec(vec![0.0, 20.0, 0.0, 0.0]);
        let l = loss(&spec, &w, &borrow(&[vec![1.0]], &[1])).unwrap();
        assert!(l < 1e-8, "loss {l}");
    }

    #[test]
    fn bias_gradient_at_uniform_prediction() {
        let spec = ModelSpec::softmax(3, 4);
        let w = ParamVector::zeros(spec.num_params());
        let c = 2;
        let g = gradient(&spec, &w, &borrow(&[vec![0.3, -1.0, 2.0]], &[c])).unwrap();
        let bias = &g.as_slice()[spec.num_classes * spec.input_dim..];
        for (j, &gj) in bias.iter().enumerate() {
            let expected = 0.25 - if j == c { 1.0 } else { 0.0 };
            assert!((gj - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_vanishes_near_separable_optimum() {
        let spec = ModelSpec::softmax(1, 2);
        let batch = borrow(&[vec![1.0], vec![-1.0]], &[1, 0]);
        let w = ParamVector::from_vec(vec![-20.0, 20.0, 0.0, 0.0]);
        let g = gradient(&spec, &w, &batch).unwrap();
        assert!(g.l2_norm() < 1e-6);
        // softmax bias gradients always sum to zero
        assert!((g.as_slice()[2] + g.as_slice()[3]).abs() < 1e-15);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let spec = ModelSpec::softmax(2, 3);
        let batch = borrow(&[vec![1.0, 2.0]], &[0]);
        assert!(matches!(
            loss(&spec, &ParamVector::zeros(5), &batch),
            Err(ModelError::Dimension(_))
        ));
        let bad = borrow(&[vec![1.0]], &[0]);
        assert!(gradient(&spec, &ParamVector::zeros(9), &bad).is_err());
        let bad_label = borrow(&[vec![1.0, 2.0]], &[3]);
        assert!(matches!(
            loss(&spec, &ParamVector::zeros(9), &bad_label),
            Err(ModelError::LabelOutOfRange { .. })
        ));
        assert!(Batch::new(vec![], vec![]).is_err());
    }

    #[test]
    fn finite_differences_match_for_both_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in [ModelSpec::softmax(6, 4), ModelSpec::mlp1(5, 6, 3)] {
            let (xs, ys) = random_batch(&mut rng, 5, spec.input_dim, spec.num_classes);
            let batch = borrow(&xs, &ys);
            let w: ParamVector =
                (0..spec.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>().into();
            let g = gradient(&spec, &w, &batch).unwrap();
            let eps = 1e-5;
            for i in 0..spec.num_params() {
                let mut plus = w.clone();
                plus.as_mut_slice()[i] += eps;
                let mut minus = w.clone();
                minus.as_mut_slice()[i] -= eps;
                let fd = (loss(&spec, &plus, &batch).unwrap() - loss(&spec, &minus, &batch).unwrap()) / (2.0 * eps);
                let denom = fd.abs().max(g[i].abs()).max(1e-8);
                assert!((fd - g[i]).abs() / denom < 1e-5 || (fd - g[i]).abs() < 1e-10, "param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn small_step_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut decreased = 0;
        for trial in 0..100 {
            let spec = if trial % 2 == 0 { ModelSpec::softmax(4, 3) } else { ModelSpec::mlp1(4, 5, 3) };
            let (xs, ys) = random_batch(&mut rng, 10, 4, 3);
            let batch = borrow(&xs, &ys);
            let w = spec.init_params(&mut rng);
            let g = gradient(&spec, &w, &batch).unwrap();
            let mut stepped = w.clone();
            stepped.axpy_assign(-1e-3, &g).unwrap();
            if loss(&spec, &stepped, &batch).unwrap() < loss(&spec, &w, &batch).unwrap() {
                decreased += 1;
            }
        }
        assert!(decreased >= 95, "{decreased}/100");
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::softmax(3, 1).validate().is_err());
        assert!(ModelSpec::mlp1(3, 0, 2).validate().is_err());
        assert!(ModelSpec { hidden_dim: 2, ..ModelSpec::softmax(3, 2) }.validate().is_err());
        assert!(ModelSpec::mlp1(3, 4, 2).validate().is_ok());
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

/// Gaussian-blob classification data; one unit-covariance blob per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub input_dim: usize,
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { num_classes: 10, per_class: 500, test_per_class: 100, input_dim: 20, separation: 3.0 }
    }
}

impl SyntheticSpec {
    /// Generates the training set and a held-out test set drawn from the same blobs.
    ///
    /// The training half is identical to `generate_synthetic` with the same seed.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        let mut gen = BlobGenerator::new(self.num_classes, self.input_dim, self.separation, seed)?;
        let train = gen.draw(self.per_class)?;
        let test = gen.draw(self.test_per_class.max(1))?;
        Ok((train, test))
    }
}

struct BlobGenerator {
    rng: ChaCha8Rng,
    means: Vec<Vec<f64>>,
    input_dim: usize,
}

impl BlobGenerator {
    fn new(num_classes: usize, input_dim: usize, separation: f64, seed: u64) -> Result<Self, DataError> {
        if num_classes < 2 || input_dim == 0 {
            return Err(DataError::Invalid("synthetic data needs >= 2 classes and input_dim > 0".into()));
        }
        if !separation.is_finite() || separation < 0.0 {
            return Err(DataError::Invalid(format!("separation must be finite and >= 0, got {separation}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let directions = random_frame(&mut rng, num_classes, input_dim);
        let means = directions
            .into_iter()
            .map(|d| d.into_iter().map(|v| v * separation).collect())
            .collect();
        Ok(Self { rng, means, input_dim })
    }

    fn draw(&mut self, per_class: usize) -> Result<Dataset, DataError> {
        if per_class == 0 {
            return Err(DataError::Invalid("per_class must be positive".into()));
        }
        let k = self.means.len();
        let mut features = Vec::with_capacity(k * per_class * self.input_dim);
        let mut labels = Vec::with_capacity(k * per_class);
        for (c, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                features.extend(mean.iter().map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    m + z
                }));
                labels.push(c);
            }
        }
        Dataset::new(features, labels, self.input_dim, k)
    }
}

/// Unit directions, mutually orthogonal whenever `count <= dim`.
fn random_frame(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if frame.len() < dim {
            for u in &frame {
                let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        frame.push(v.into_iter().map(|x| x / norm).collect());
    }
    frame
}

/// Class-sorted Gaussian blobs with means at distance `separation` from the origin.
pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    input_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    BlobGenerator::new(num_classes, input_dim, separation, seed)?.draw(per_class)
}

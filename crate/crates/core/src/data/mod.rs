//! Datasets, learner shards and the partitioning procedures that make them non-IID.

mod idx;
mod partition;
mod synthetic;

use std::path::PathBuf;

use rand::Rng;
use thiserror::Error;

use crate::model::{Batch, ModelError};
use crate::scheduler::LearnerId;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{balanced_sizes, partition_noniid, partition_partial};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated IDX payload, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot split {n} examples among {k} learners")]
    TooManyLearners { n: usize, k: usize },
    #[error("batch size {batch_size} exceeds shard size {shard_size}")]
    BatchTooLarge { batch_size: usize, shard_size: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Labelled examples stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if input_dim == 0 {
            return Err(DataError::Invalid("input_dim must be positive".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} rows of {}",
                features.len(),
                labels.len(),
                input_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::Invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self { features, labels, input_dim, num_classes })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    #[inline]
    pub fn example(&self, i: usize) -> (&[f64], usize) {
        (self.features(i), self.labels[i])
    }

    /// Borrows the listed examples as a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<'_>, ModelError> {
        Batch::new(
            indices.iter().map(|&i| self.features(i)).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Per-class example counts.
    pub fn label_histogram(&self, indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for i in indices {
            hist[self.labels[i]] += 1;
        }
        hist
    }
}

/// The indices of the dataset owned by one learner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub owner: LearnerId,
    pub indices: Vec<usize>,
}

impl Shard {
    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn label_set(&self, dataset: &Dataset) -> Vec<usize> {
        let mut labels: Vec<usize> = self.indices.iter().map(|&i| dataset.labels()[i]).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn full_batch<'a>(&self, dataset: &'a Dataset) -> Result<Batch<'a>, ModelError> {
        dataset.batch(&self.indices)
    }
}

/// Draws `batch_size` distinct indices uniformly from the shard.
pub fn sample_batch_indices<R: Rng + ?Sized>(
    shard: &Shard,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>, DataError> {
    if batch_size > shard.len() || batch_size == 0 {
        return Err(DataError::BatchTooLarge { batch_size, shard_size: shard.len() });
    }
    Ok(rand::seq::index::sample(rng, shard.len(), batch_size)
        .into_iter()
        .map(|j| shard.indices[j])
        .collect())
}

/// Uniform mini-batch without replacement from the shard.
pub fn sample_batch<'a, R: Rng + ?Sized>(
    shard: &Shard,
    dataset: &'a Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch<'a>, DataError> {
    let indices = sample_batch_indices(shard, batch_size, rng)?;
    dataset.batch(&indices).map_err(|e| DataError::Invalid(e.to_string()))
}

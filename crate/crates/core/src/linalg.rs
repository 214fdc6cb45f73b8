//! Dense vector arithmetic over flat `f64` parameter buffers.
//!
//! Model parameters, velocities and gradients all share the [`ParamVector`]
//! representation so schedulers never need to know a model's shape.

use std::ops::Index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("dimension mismatch: expected length {expected}, got {actual}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub actual: usize,
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<(), DimensionMismatch> {
    if expected == actual {
        Ok(())
    } else {
        Err(DimensionMismatch { expected, actual })
    }
}

/// A fixed-length vector of model parameters, velocities or gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// In-place `self += a * x`.
    pub fn axpy_assign(&mut self, a: f64, x: &ParamVector) -> Result<(), DimensionMismatch> {
        check_len(self.len(), x.len())?;
        for (y, &xi) in self.0.iter_mut().zip(&x.0) {
            *y += a * xi;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, a: f64) {
        for v in &mut self.0 {
            *v *= a;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.0.fill(value);
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(self)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Returns `a * x + y`.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector, DimensionMismatch> {
    check_len(y.len(), x.len())?;
    if a == 0.0 {
        // keeps axpy(0, x, y) == y bitwise, including signed zeros in y
        return Ok(y.clone());
    }
    Ok(ParamVector(
        x.0.iter().zip(&y.0).map(|(&xi, &yi)| a * xi + yi).collect(),
    ))
}

pub fn scale(a: f64, x: &ParamVector) -> ParamVector {
    ParamVector(x.0.iter().map(|&xi| a * xi).collect())
}

pub fn l2_norm(x: &ParamVector) -> f64 {
    x.0.iter().map(|v| v * v).sum::<f64>().sqrt()
}

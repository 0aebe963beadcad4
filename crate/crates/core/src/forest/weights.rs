use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse nonnegative kernel weights over training rows, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

const SUM_TOLERANCE: f64 = 1e-10;

impl WeightVector {
    pub fn new(indices: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if indices.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} indices but {} weights",
                indices.len(),
                weights.len()
            )));
        }
        if indices.is_empty() {
            return Err(Error::InvalidInput(
                "weight vector has empty support".into(),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "weights must be positive, got {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(WeightVector { indices, weights })
    }

    /// Uniform weights `1/k` over `indices`.
    pub fn uniform(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput(
                "weight vector has empty support".into(),
            ));
        }
        let w = 1.0 / indices.len() as f64;
        let weights = vec![w; indices.len()];
        Ok(WeightVector { indices, weights })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(indices: Vec<usize>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), weights.len());
        WeightVector { indices, weights }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Effective support size `1 / sum w_i^2`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.sum_of_squares()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Dense representation over `n` rows.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut dense = vec![0.0; n];
        for (i, w) in self.iter() {
            dense[i] += w;
        }
        dense
    }
}

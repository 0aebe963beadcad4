use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Covariates (row-major, `n x p`) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
    feature_names: Vec<String>,
}

/// Identity of the rows a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub rows: usize,
    pub cols: usize,
    pub checksum: String,
}

impl Dataset {
    /// Builds a dataset from a row-major covariate buffer.
    pub fn new(x: Vec<f64>, p: usize, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if p == 0 {
            return Err(Error::Data("dataset needs at least one covariate".into()));
        }
        if x.len() != y.len() * p {
            return Err(Error::Data(format!(
                "covariate buffer has {} entries, expected {} x {}",
                x.len(),
                y.len(),
                p
            )));
        }
        if y.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 rows, got {}",
                y.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::Data(format!(
                "{} feature names for {p} columns",
                feature_names.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite covariate at row {}, column {}",
                i / p,
                i % p
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite response at row {i}")));
        }
        Ok(Dataset {
            x,
            y,
            p,
            feature_names,
        })
    }

    /// Builds a dataset with default feature names `x1..xp`.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Data("ragged covariate rows".into()));
        }
        let x = rows.iter().flatten().copied().collect();
        Dataset::new(x, p, y, default_names(p))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    /// Rows `indices` in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Dataset> {
        let mut x = Vec::with_capacity(indices.len() * self.p);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n() {
                return Err(Error::InvalidInput(format!("row {i} out of range")));
            }
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset::new(x, self.p, y, self.feature_names.clone())
    }

    /// Same covariates with new responses.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Dataset> {
        if y.len() != self.n() {
            return Err(Error::Data(format!(
                "{} responses for {} rows",
                y.len(),
                self.n()
            )));
        }
        Dataset::new(self.x.clone(), self.p, y, self.feature_names.clone())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut hasher = Sha256::new();
        hasher.update((self.n() as u64).to_le_bytes());
        hasher.update((self.p as u64).to_le_bytes());
        for v in self.x.iter().chain(&self.y) {
            hasher.update(v.to_bits().to_le_bytes());
        }
        Fingerprint {
            rows: self.n(),
            cols: self.p,
            checksum: hex(&hasher.finalize()),
        }
    }

    /// Digest of a single `(x, y)` row, used to detect rows shared between folds.
    pub fn row_digest(&self, i: usize) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for v in self.row(i).iter().chain(std::iter::once(&self.y[i])) {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.finalize().into()
    }
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

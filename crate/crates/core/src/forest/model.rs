use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ForestConfig, ResolvedConfig};
use super::dataset::{Dataset, Fingerprint};
use super::sampling::{honest_split, subsample_indices};
use super::tree::{grow_tree, TreeStructure};
use super::weights::WeightVector;
use crate::error::{Error, Result};
use crate::seed;

/// An immutable ensemble of honest trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub(crate) trees: Vec<TreeStructure>,
    pub(crate) config: ResolvedConfig,
    /// Covariate columns the trees may split on (all of them unless the
    /// model was fitted with a feature subset removed).
    pub(crate) features: Vec<usize>,
    pub(crate) fingerprint: Fingerprint,
}

/// Training and estimation halves of one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct HonestHalves {
    pub train: Vec<usize>,
    pub est: Vec<usize>,
}

/// Grows tree `index` of a forest. The random stream is derived from the
/// configured seed and the index alone, so any tree can be regrown in
/// isolation.
pub fn fit_tree(
    data: &Dataset,
    config: &ResolvedConfig,
    features: &[usize],
    index: usize,
) -> Result<(TreeStructure, HonestHalves)> {
    let mut rng = seed::stream(config.seed, index as u64);
    let subsample = subsample_indices(data.n(), config.subsample_size, &mut rng)?;
    let (train, est) = honest_split(&subsample, &mut rng)?;
    let tree = grow_tree(data, &train, &est, features, config, &mut rng)?;
    Ok((tree, HonestHalves { train, est }))
}

/// Fits a forest that may only split on `features`.
pub fn fit_forest_on_features(
    data: &Dataset,
    config: &ForestConfig,
    features: Vec<usize>,
) -> Result<ForestModel> {
    if let Some(&j) = features.iter().find(|&&j| j >= data.p()) {
        return Err(Error::InvalidInput(format!("feature {j} out of range")));
    }
    let resolved = config.resolve(data.n(), features.len())?;
    let trees = (0..resolved.num_trees)
        .into_par_iter()
        .map(|b| fit_tree(data, &resolved, &features, b).map(|(tree, _)| tree))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        config: resolved,
        features,
        fingerprint: data.fingerprint(),
    })
}

pub fn fit_forest(data: &Dataset, config: &ForestConfig) -> Result<ForestModel> {
    fit_forest_on_features(data, config, (0..data.p()).collect())
}

impl ForestModel {
    pub fn trees(&self) -> &[TreeStructure] {
        &self.trees
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.config
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    /// Rows of the training data.
    pub fn n_train(&self) -> usize {
        self.fingerprint.rows
    }

    /// Dimension of query points.
    pub fn dim(&self) -> usize {
        self.fingerprint.cols
    }

    pub fn subsample_size(&self) -> usize {
        self.config.subsample_size
    }

    pub fn warnings(&self) -> Vec<String> {
        self.config.warnings(self.n_train())
    }

    pub(crate) fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "query point has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    /// Checks that the model was trained on `data`.
    pub fn check_trained_on(&self, data: &Dataset) -> Result<()> {
        if &data.fingerprint() != self.fingerprint() {
            return Err(Error::FoldLeakage(
                "model fingerprint does not match the supplied training data".into(),
            ));
        }
        Ok(())
    }

    /// Forest kernel `K(x, X_i) = (1/B) sum_b K_b(x, X_i)`.
    pub fn weights(&self, x: &[f64]) -> Result<WeightVector> {
        let mut ws = KernelWorkspace::new(self.n_train());
        self.weights_with(x, &mut ws)
    }

    /// Like [`ForestModel::weights`] but reuses `ws` between queries.
    pub fn weights_with(&self, x: &[f64], ws: &mut KernelWorkspace) -> Result<WeightVector> {
        self.check_query(x)?;
        ws.reset(self.n_train());
        let scale = 1.0 / self.trees.len() as f64;
        for tree in &self.trees {
            let members = tree.leaf_members(x);
            if members.is_empty() {
                return Err(Error::CorruptModel(
                    "leaf without estimation members".into(),
                ));
            }
            let w = scale / members.len() as f64;
            for &m in members {
                let m = m as usize;
                if ws.acc[m] == 0.0 {
                    ws.touched.push(m);
                }
                ws.acc[m] += w;
            }
        }
        ws.touched.sort_unstable();
        let weights = ws.touched.iter().map(|&i| ws.acc[i]).collect();
        Ok(WeightVector::from_parts(ws.touched.clone(), weights))
    }
}

/// `forest_weights(model, x)`.
pub fn forest_weights(model: &ForestModel, x: &[f64]) -> Result<WeightVector> {
    model.weights(x)
}

/// Dense accumulator reused across weight queries.
#[derive(Debug, Default, Clone)]
pub struct KernelWorkspace {
    acc: Vec<f64>,
    touched: Vec<usize>,
}

impl KernelWorkspace {
    pub fn new(n: usize) -> Self {
        KernelWorkspace {
            acc: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    fn reset(&mut self, n: usize) {
        if self.acc.len() != n {
            self.acc = vec![0.0; n];
        } else {
            for &i in &self.touched {
                self.acc[i] = 0.0;
            }
        }
        self.touched.clear();
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pinball::QuantileLevel;

/// How the per-tree subsample size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsample {
    /// Fixed size `s`; odd values are rounded down.
    Size(usize),
    /// Rate `beta` with `s = round(n^beta)` rounded down to even.
    Rate(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub subsample: Subsample,
    /// Minimum fraction of the parent's training rows in each child.
    pub alpha: f64,
    /// Minimum number of estimation-half rows in every leaf.
    pub min_leaf_est: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub seed: u64,
    pub tau: QuantileLevel,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 1000,
            subsample: Subsample::Rate(0.5),
            alpha: 0.05,
            min_leaf_est: 5,
            mtry: None,
            seed: 0,
            tau: QuantileLevel::new(0.5).expect("0.5 is a valid level"),
        }
    }
}

/// A [`ForestConfig`] with every default materialised against a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub num_trees: usize,
    pub subsample_size: usize,
    /// Subsampling exponent `ln s / ln n` of the resolved size.
    pub beta: f64,
    pub alpha: f64,
    pub min_leaf_est: usize,
    pub mtry: usize,
    pub seed: u64,
    pub tau: QuantileLevel,
}

fn even_floor(s: usize) -> usize {
    s - s % 2
}

impl ForestConfig {
    /// Validates the configuration for `n` rows and `p_active` usable
    /// covariates and fills in the defaults.
    pub fn resolve(&self, n: usize, p_active: usize) -> Result<ResolvedConfig> {
        if self.num_trees == 0 {
            return Err(Error::Config("num_trees must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 0.5), got {}",
                self.alpha
            )));
        }
        if self.min_leaf_est == 0 {
            return Err(Error::Config("min_leaf_est must be positive".into()));
        }
        if p_active == 0 {
            return Err(Error::Config(
                "no covariates available for splitting".into(),
            ));
        }
        let mtry = match self.mtry {
            None => (p_active as f64).sqrt().ceil() as usize,
            Some(m) if m >= 1 && m <= p_active => m,
            Some(m) => {
                return Err(Error::Config(format!(
                    "mtry must lie in 1..={p_active}, got {m}"
                )))
            }
        };
        let s = match self.subsample {
            Subsample::Size(s) => {
                let s = even_floor(s);
                if s < 2 || s > n {
                    return Err(Error::Config(format!(
                        "subsample size {s} must be an even number in 2..={n}"
                    )));
                }
                s
            }
            Subsample::Rate(beta) => {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::Config(format!(
                        "subsampling rate must lie in (0, 1), got {beta}"
                    )));
                }
                let raw = even_floor((n as f64).powf(beta).round() as usize);
                raw.max(4 * self.min_leaf_est).min(even_floor(n))
            }
        };
        if s / 2 < 2 * self.min_leaf_est {
            return Err(Error::Config(format!(
                "honest halves of size {} cannot hold two leaves of {} estimation rows",
                s / 2,
                self.min_leaf_est
            )));
        }
        let beta = if n > 1 {
            (s as f64).ln() / (n as f64).ln()
        } else {
            1.0
        };
        Ok(ResolvedConfig {
            num_trees: self.num_trees,
            subsample_size: s,
            beta,
            alpha: self.alpha,
            min_leaf_est: self.min_leaf_est,
            mtry,
            seed: self.seed,
            tau: self.tau,
        })
    }
}

impl ResolvedConfig {
    /// Warnings about settings outside the regime the asymptotics assume.
    pub fn warnings(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        let needed = 2 * n / self.subsample_size;
        if self.num_trees < needed {
            out.push(format!(
                "num_trees = {} is small relative to n/s = {:.1}; kernel weights carry \
                 Monte Carlo noise (use at least {needed})",
                self.num_trees,
                n as f64 / self.subsample_size as f64
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(subsample: Subsample) -> ForestConfig {
        ForestConfig {
            subsample,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn rate_rounds_to_even_and_clamps() {
        // 2000^0.4 = 20.9 -> 21 -> 20
        assert_eq!(
            cfg(Subsample::Rate(0.4))
                .resolve(2000, 2)
                .unwrap()
                .subsample_size,
            20
        );
        // 1000^0.8 = 251.2 -> 251 -> 250
        assert_eq!(
            cfg(Subsample::Rate(0.8))
                .resolve(1000, 2)
                .unwrap()
                .subsample_size,
            250
        );
        // 1000^0.3 = 7.9 -> clamped to 4 * min_leaf_est
        assert_eq!(
            cfg(Subsample::Rate(0.3))
                .resolve(1000, 2)
                .unwrap()
                .subsample_size,
            20
        );
    }

    #[test]
    fn size_rules() {
        let r = cfg(Subsample::Size(41)).resolve(100, 3).unwrap();
        assert_eq!(r.subsample_size, 40);
        assert_eq!(r.mtry, 2);
        assert!((r.beta - 40f64.ln() / 100f64.ln()).abs() < 1e-15);
        assert!(cfg(Subsample::Size(200)).resolve(100, 3).is_err());
        assert!(cfg(Subsample::Size(10)).resolve(100, 3).is_err());
        let small = ForestConfig {
            min_leaf_est: 1,
            ..cfg(Subsample::Size(4))
        };
        assert!(small.resolve(5, 1).is_ok());
    }

    #[test]
    fn rejects_invalid_parameters() {
        let bad_alpha = ForestConfig {
            alpha: 0.5,
            ..ForestConfig::default()
        };
        assert!(bad_alpha.resolve(100, 2).is_err());
        let bad_mtry = ForestConfig {
            mtry: Some(3),
            ..ForestConfig::default()
        };
        assert!(bad_mtry.resolve(100, 2).is_err());
        assert!(cfg(Subsample::Rate(1.0)).resolve(100, 2).is_err());
    }

    #[test]
    fn warns_on_few_trees() {
        let r = ForestConfig {
            num_trees: 10,
            subsample: Subsample::Size(20),
            ..ForestConfig::default()
        }
        .resolve(1000, 2)
        .unwrap();
        assert_eq!(r.warnings(1000).len(), 1);
    }
}

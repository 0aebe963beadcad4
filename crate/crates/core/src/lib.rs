//! Honest quantile regression forests with inference for variable importance.
//!
//! The crate is organised bottom-up:
//!
//! * [`pinball`] holds the check loss, its left-derivative score and the
//!   Knight decomposition of loss increments.
//! * [`forest`] grows honest subsampled trees with the gradient split rule
//!   and turns them into kernel weights over the training rows.
//! * [`quantile`] minimises the forest-weighted pinball risk and attaches the
//!   plug-in variance scaling, conditional density and pointwise intervals.
//! * [`vimp`] estimates the excess pinball risk of dropping a feature subset
//!   with cross-fitting, an analytic bias correction and normal intervals.
//! * [`simlab`] provides Gaussian data-generating processes with quadrature
//!   oracles and the Monte Carlo campaigns that exercise the estimators.
//! * [`cli`] wires everything to the `qrfvimp` command-line tool.

pub mod cli;
pub mod error;
pub mod forest;
pub mod numeric;
pub mod pinball;
pub mod quantile;
pub mod seed;
pub mod simlab;
pub mod vimp;

pub use error::{Error, Result};
pub use forest::{Dataset, ForestConfig, ForestModel, Subsample, TreeStructure, WeightVector};
pub use pinball::QuantileLevel;
pub use quantile::QuantilePrediction;
pub use vimp::{FeatureSubset, VimpReport};

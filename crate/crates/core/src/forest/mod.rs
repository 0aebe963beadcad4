//! Honest subsampled trees grown with the gradient split rule, and the
//! forest kernel they induce.

mod config;
mod dataset;
mod model;
pub mod persist;
mod sampling;
mod split;
mod tree;
mod weights;

pub use config::{ForestConfig, ResolvedConfig, Subsample};
pub use dataset::{default_names, Dataset, Fingerprint};
pub use model::{
    fit_forest, fit_forest_on_features, fit_tree, forest_weights, ForestModel, HonestHalves,
    KernelWorkspace,
};
pub use persist::ModelDocument;
pub use sampling::{honest_split, subsample_indices};
pub use split::{empirical_quantile, pseudo_outcomes, split_gain};
pub use tree::{grow_tree, tree_kernel, Node, TreeStructure};
pub use weights::WeightVector;

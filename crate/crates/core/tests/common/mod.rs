//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use qrf_vimp::forest::{fit_tree, Node, ResolvedConfig, TreeStructure};
use qrf_vimp::seed;
use qrf_vimp::simlab::{generate, DgpSpec};
use qrf_vimp::{Dataset, Result};
use rand::Rng;

/// Uniform covariates on `[0, 1]^p`, `Y = sum_j c_j X_j + N(0, 1)`.
pub fn gaussian_data(coefficients: &[f64], p: usize, n: usize, seed_: u64) -> Dataset {
    let spec = DgpSpec::linear_gaussian(coefficients.to_vec(), 1.0, p).expect("valid spec");
    generate(&spec, n, &mut seed::rng_from(seed_)).expect("valid sample")
}

/// Split nodes whose smaller child holds fewer training rows than the
/// minimum admissible child `max(1, ceil(alpha * n_parent))`. The product
/// is nudged down so that e.g. `0.07 * 100` counts as exactly 7.
pub fn alpha_violations(
    tree: &TreeStructure,
    data: &Dataset,
    train: &[usize],
    alpha: f64,
) -> usize {
    let counts = tree.route_counts(data, train);
    tree.nodes()
        .iter()
        .enumerate()
        .filter(|(at, node)| match node {
            Node::Split { left, right, .. } => {
                let min_child = ((alpha * counts[*at] as f64 - 1e-9).ceil() as usize).max(1);
                counts[*left as usize].min(counts[*right as usize]) < min_child
            }
            Node::Leaf { .. } => false,
        })
        .count()
}

/// Regrows tree `index` after replacing every estimation-half response with
/// noise and reports whether the structure came out identical.
pub fn structure_ignores_estimation_responses(
    data: &Dataset,
    config: &ResolvedConfig,
    index: usize,
    noise_seed: u64,
) -> Result<bool> {
    let features: Vec<usize> = (0..data.p()).collect();
    let (tree, halves) = fit_tree(data, config, &features, index)?;
    let mut rng = seed::rng_from(noise_seed);
    let mut y = data.y().to_vec();
    for &i in &halves.est {
        y[i] = rng.random_range(-1e3..1e3);
    }
    let perturbed = data.with_responses(y)?;
    let (again, halves_again) = fit_tree(&perturbed, config, &features, index)?;
    Ok(again == tree && halves_again == halves)
}

/// Euclidean diameter of the leaf cell containing `x`, clipped to the unit cube.
pub fn leaf_diameter(tree: &TreeStructure, x: &[f64]) -> f64 {
    tree.leaf_cell(x, (0.0, 1.0))
        .iter()
        .map(|(lo, hi)| (hi - lo).powi(2))
        .sum::<f64>()
        .sqrt()
}

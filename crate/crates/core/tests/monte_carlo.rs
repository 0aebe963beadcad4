//! Monte Carlo checks of the estimators against quadrature oracles.
//!
//! Every replication uses a fixed derived seed, so the outcomes are
//! deterministic; thresholds are set by the stated tolerances, not tuned.

mod common;

use common::gaussian_data;
use qrf_vimp::forest::{fit_forest, ForestConfig, Subsample};
use qrf_vimp::quantile::{predict_with_interval, variance_scaling};
use qrf_vimp::seed;
use qrf_vimp::simlab::{oracle_quantile, oracle_vi, DgpSpec};
use qrf_vimp::vimp::{cross_fitted_vimp, FeatureSubset, VimpOptions, VimpReport};
use qrf_vimp::QuantileLevel;
use rayon::prelude::*;

fn median() -> QuantileLevel {
    QuantileLevel::new(0.5).unwrap()
}

#[test]
fn variance_scaling_is_stable_across_refits() {
    let data = gaussian_data(&[1.0, 0.0], 2, 1000, 71);
    let x = [0.5, 0.5];
    let etas: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|r| {
            let cfg = ForestConfig {
                seed: seed::derive(9, &[r]),
                ..ForestConfig::default()
            };
            let model = fit_forest(&data, &cfg).unwrap();
            variance_scaling(
                &model.weights(&x).unwrap(),
                model.n_train(),
                model.subsample_size(),
            )
        })
        .collect();
    assert!(etas.iter().all(|&e| e > 0.0));
    let mean = etas.iter().sum::<f64>() / 100.0;
    let sd = (etas.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    assert!(sd / mean < 0.2, "coefficient of variation {}", sd / mean);
}

#[test]
fn quantile_error_shrinks_with_sample_size() {
    let spec = DgpSpec::linear_gaussian(vec![1.0], 1.0, 2).unwrap();
    let queries: Vec<[f64; 2]> = (0..10).map(|k| [0.05 + 0.1 * k as f64, 0.5]).collect();
    let rmse = |n: usize| {
        let sq: f64 = (0..100u64)
            .into_par_iter()
            .map(|r| {
                let data = gaussian_data(&[1.0], 2, n, seed::derive(n as u64, &[r]));
                let cfg = ForestConfig {
                    num_trees: 200,
                    subsample: Subsample::Rate(0.4),
                    seed: r,
                    ..ForestConfig::default()
                };
                let model = fit_forest(&data, &cfg).unwrap();
                queries
                    .iter()
                    .map(|x| {
                        let q = predict_with_interval(&model, &data, x, 0.95).unwrap().q_hat;
                        (q - oracle_quantile(&spec, median(), x).unwrap()).powi(2)
                    })
                    .sum::<f64>()
            })
            .sum();
        (sq / 1000.0).sqrt()
    };
    let (small, large) = (rmse(1000), rmse(4000));
    assert!(large < small, "rmse n=1000 {small}, n=4000 {large}");
}

/// Reports for `Y = 2 X1 + N(0, 1)` with 4000 rows split into two folds.
fn importance_runs(subset: usize, reps: u64) -> Vec<VimpReport> {
    let subset = FeatureSubset::new(vec![subset]).unwrap();
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = gaussian_data(
                &[2.0, 0.0],
                2,
                4000,
                seed::derive(2024, &[subset.indices()[0] as u64, r]),
            );
            let cfg = ForestConfig {
                num_trees: 300,
                subsample: Subsample::Rate(0.7),
                min_leaf_est: 1,
                seed: seed::derive(7, &[r]),
                ..ForestConfig::default()
            };
            cross_fitted_vimp(&data, &subset, &cfg, &VimpOptions::seeded_from(cfg.seed))
                .unwrap()
                .report
        })
        .collect()
}

#[test]
fn noise_feature_importance_is_insignificant_and_bias_constant_tracks_error() {
    let reports = importance_runs(1, 200);
    let within = reports[..100]
        .iter()
        .filter(|r| r.v_hat.abs() < 3.0 * r.sigma_s_hat / (r.n_eval as f64).sqrt())
        .count();
    assert!(within >= 90, "{within} of 100 within 3 standard errors");

    // The oracle importance of a zero-coefficient feature is zero.
    let scaled_error = reports
        .iter()
        .map(|r| (r.n_eval as f64).powf(1.0 - r.beta_used) * r.v_hat)
        .sum::<f64>()
        / 200.0;
    let c_hat = reports.iter().map(|r| r.c_hat).sum::<f64>() / 200.0;
    assert!(
        scaled_error * c_hat > 0.0,
        "sign: scaled error {scaled_error}, c_hat {c_hat}"
    );
    let ratio = scaled_error / c_hat;
    assert!(
        (0.5..=2.0).contains(&ratio),
        "scaled error {scaled_error}, c_hat {c_hat}"
    );
}

#[test]
fn signal_feature_importance_is_positive_and_near_oracle() {
    let spec = DgpSpec::linear_gaussian(vec![2.0, 0.0], 1.0, 2).unwrap();
    let oracle = oracle_vi(&spec, median(), &FeatureSubset::new(vec![0]).unwrap()).unwrap();
    let reports = importance_runs(0, 100);
    let positive = reports.iter().filter(|r| r.v_hat > 0.0).count();
    assert!(positive >= 95, "{positive} of 100 positive");
    let mean = reports.iter().map(|r| r.v_hat).sum::<f64>() / 100.0;
    let sd = reports.iter().map(|r| r.sigma_s_hat).sum::<f64>() / 100.0 / 2000f64.sqrt();
    assert!(
        (mean - oracle).abs() < 0.1 * oracle,
        "mean {mean}, oracle {oracle}, per-fit sd {sd}"
    );
}

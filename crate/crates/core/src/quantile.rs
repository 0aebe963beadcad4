//! Forest-weighted quantile estimation with plug-in variance scaling,
//! conditional density and pointwise normal intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Dataset, ForestModel, KernelWorkspace, WeightVector};
use crate::numeric::{self, SQRT_2PI};
use crate::pinball::{self, QuantileLevel};

/// Lower bound applied to density estimates before they enter `1 / f^2`.
pub const DENSITY_FLOOR: f64 = 1e-4;

const CUMULATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePrediction {
    pub q_hat: f64,
    pub eta_hat: f64,
    pub f_hat: f64,
    pub sigma2_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub bandwidth: f64,
    /// True when `f_hat` was clamped to [`DENSITY_FLOOR`].
    pub density_floored: bool,
}

/// Smallest support value whose cumulative weight reaches `tau`.
///
/// This is the left end of the argmin set of `sum_i w_i rho_tau(y_i - theta)`.
/// `values` is indexed by the weight vector's row indices.
pub fn weighted_quantile(
    values: &[f64],
    weights: &WeightVector,
    tau: QuantileLevel,
) -> Result<f64> {
    let mut pairs = support_pairs(values, weights)?;
    Ok(quantile_of_pairs(&mut pairs, tau.value()))
}

fn support_pairs(values: &[f64], weights: &WeightVector) -> Result<Vec<(f64, f64)>> {
    if weights.is_empty() {
        return Err(Error::InvalidInput("empty weight support".into()));
    }
    weights
        .iter()
        .map(|(i, w)| match values.get(i) {
            Some(&v) if v.is_finite() => Ok((v, w)),
            Some(v) => Err(Error::InvalidInput(format!(
                "non-finite value {v} at row {i}"
            ))),
            None => Err(Error::InvalidInput(format!(
                "weight index {i} out of range"
            ))),
        })
        .collect()
}

fn quantile_of_pairs(pairs: &mut [(f64, f64)], tau: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cumulative = 0.0;
    let mut k = 0;
    while k < pairs.len() {
        let value = pairs[k].0;
        // ties contribute jointly
        while k < pairs.len() && pairs[k].0 == value {
            cumulative += pairs[k].1;
            k += 1;
        }
        if cumulative >= tau - CUMULATIVE_SLACK {
            return value;
        }
    }
    pairs[pairs.len() - 1].0
}

fn check_responses(model: &ForestModel, responses: &[f64]) -> Result<()> {
    if responses.len() != model.n_train() {
        return Err(Error::InvalidInput(format!(
            "{} responses for a model trained on {} rows",
            responses.len(),
            model.n_train()
        )));
    }
    Ok(())
}

/// `q_hat(x)`: the weighted quantile of the training responses under the
/// forest kernel at `x`.
pub fn predict_quantile(model: &ForestModel, data: &Dataset, x: &[f64]) -> Result<f64> {
    predict_quantile_from(model, data.y(), x)
}

pub fn predict_quantile_from(model: &ForestModel, responses: &[f64], x: &[f64]) -> Result<f64> {
    check_responses(model, responses)?;
    let w = model.weights(x)?;
    weighted_quantile(responses, &w, model.config().tau)
}

/// `eta_hat = (n / s) * sum_i K(x, X_i)^2`.
pub fn variance_scaling(weights: &WeightVector, n: usize, s: usize) -> f64 {
    n as f64 / s as f64 * weights.sum_of_squares()
}

/// Weighted Gaussian kernel density of the responses at `at`, floored at
/// [`DENSITY_FLOOR`].
pub fn conditional_density(values: &[f64], weights: &WeightVector, at: f64, h: f64) -> Result<f64> {
    raw_density(values, weights, at, h).map(|f| f.max(DENSITY_FLOOR))
}

fn raw_density(values: &[f64], weights: &WeightVector, at: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    let mut f = 0.0;
    for (i, w) in weights.iter() {
        let y = *values
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("weight index {i} out of range")))?;
        let z = (y - at) / h;
        f += w * (-0.5 * z * z).exp();
    }
    Ok(f / (h * SQRT_2PI))
}

/// Rule-of-thumb bandwidth `1.06 * sd_w * m_eff^(-1/5)` with `m_eff = 1 / sum w^2`.
///
/// Falls back to a weighted-IQR scale, and finally to `1e-3`, when the
/// weighted variance vanishes.
pub fn default_bandwidth(values: &[f64], weights: &WeightVector) -> Result<f64> {
    let pairs = support_pairs(values, weights)?;
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(
            "bandwidth selection needs at least two support points".into(),
        ));
    }
    let mean: f64 = pairs.iter().map(|(v, w)| v * w).sum();
    let var: f64 = pairs.iter().map(|(v, w)| w * (v - mean).powi(2)).sum();
    let shrink = weights.effective_size().powf(-0.2);
    let sd = var.sqrt();
    if sd > 1e-12 * mean.abs().max(1.0) {
        return Ok(1.06 * sd * shrink);
    }
    let mut sorted = pairs;
    let q75 = quantile_of_pairs(&mut sorted, 0.75);
    let q25 = quantile_of_pairs(&mut sorted, 0.25);
    Ok((1.06 * (q75 - q25) / 1.349 * shrink).max(1e-3))
}

/// Asymptotic variance `tau (1 - tau) eta / f^2`.
pub fn sigma2(tau: QuantileLevel, eta: f64, f: f64) -> f64 {
    tau.score_variance() * eta / (f * f)
}

/// Normal interval for `q_hat` given the plug-in components.
pub fn interval(q_hat: f64, sigma2_hat: f64, s_over_n: f64, level: f64) -> Result<(f64, f64)> {
    let z = numeric::two_sided_z(level)?;
    let half = z * (s_over_n * sigma2_hat).sqrt();
    Ok((q_hat - half, q_hat + half))
}

/// Point prediction plus every plug-in component evaluated from one kernel.
pub fn predict_from_weights(
    model: &ForestModel,
    responses: &[f64],
    weights: &WeightVector,
    level: f64,
) -> Result<QuantilePrediction> {
    let tau = model.config().tau;
    let n = model.n_train();
    let s = model.subsample_size();
    let q_hat = weighted_quantile(responses, weights, tau)?;
    let eta_hat = variance_scaling(weights, n, s);
    let bandwidth = if weights.len() >= 2 {
        default_bandwidth(responses, weights)?
    } else {
        1e-3
    };
    let raw = raw_density(responses, weights, q_hat, bandwidth)?;
    let f_hat = raw.max(DENSITY_FLOOR);
    let sigma2_hat = sigma2(tau, eta_hat, f_hat);
    let (ci_low, ci_high) = interval(q_hat, sigma2_hat, s as f64 / n as f64, level)?;
    Ok(QuantilePrediction {
        q_hat,
        eta_hat,
        f_hat,
        sigma2_hat,
        ci_low,
        ci_high,
        level,
        bandwidth,
        density_floored: raw < DENSITY_FLOOR,
    })
}

/// `q_hat(x) +- z * sqrt((s/n) * sigma2_hat)`.
pub fn predict_with_interval(
    model: &ForestModel,
    data: &Dataset,
    x: &[f64],
    level: f64,
) -> Result<QuantilePrediction> {
    predict_with_interval_from(model, data.y(), x, level)
}

pub fn predict_with_interval_from(
    model: &ForestModel,
    responses: &[f64],
    x: &[f64],
    level: f64,
) -> Result<QuantilePrediction> {
    numeric::two_sided_z(level)?;
    check_responses(model, responses)?;
    let w = model.weights(x)?;
    predict_from_weights(model, responses, &w, level)
}

/// Batch prediction over the rows of `queries`, reusing one kernel workspace.
pub fn predict_rows(
    model: &ForestModel,
    responses: &[f64],
    queries: &Dataset,
    level: f64,
) -> Result<Vec<QuantilePrediction>> {
    check_responses(model, responses)?;
    let mut ws = KernelWorkspace::new(model.n_train());
    (0..queries.n())
        .map(|i| {
            let w = model.weights_with(queries.row(i), &mut ws)?;
            predict_from_weights(model, responses, &w, level)
        })
        .collect()
}

/// Weighted score `sum_i w_i psi_tau(y_i - theta)`.
pub fn weighted_score(
    values: &[f64],
    weights: &WeightVector,
    theta: f64,
    tau: QuantileLevel,
) -> f64 {
    weights
        .iter()
        .map(|(i, w)| w * pinball::psi(values[i] - theta, tau.value()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{fit_forest, ForestConfig, Subsample};
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    /// Left end of the argmin of the weighted pinball risk, found by
    /// evaluating the risk at every support value (the risk is piecewise
    /// linear with kinks only there) and on a fine grid in between.
    fn brute_force_argmin(values: &[f64], weights: &[f64], t: f64) -> f64 {
        let risk = |theta: f64| -> f64 {
            values
                .iter()
                .zip(weights)
                .map(|(&v, &w)| w * pinball::loss(v - theta, t))
                .sum()
        };
        let mut support = values.to_vec();
        support.sort_by(f64::total_cmp);
        support.dedup();
        let best = support
            .iter()
            .map(|&v| risk(v))
            .fold(f64::INFINITY, f64::min);
        let lo = support[0];
        let hi = support[support.len() - 1];
        let steps = 2000;
        for k in 0..=steps {
            let theta = lo + (hi - lo) * k as f64 / steps as f64;
            assert!(risk(theta) >= best - 1e-12);
        }
        *support.iter().find(|&&v| risk(v) <= best + 1e-12).unwrap()
    }

    #[test]
    fn weighted_quantile_examples() {
        let w = WeightVector::uniform(vec![0, 1, 2, 3]).unwrap();
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(weighted_quantile(&v, &w, tau(0.5)).unwrap(), 2.0);
        assert_eq!(brute_force_argmin(&v, &[0.25; 4], 0.5), 2.0);

        let single = WeightVector::uniform(vec![0]).unwrap();
        assert_eq!(weighted_quantile(&[7.5], &single, tau(0.1)).unwrap(), 7.5);

        let w = WeightVector::new(vec![0, 1], vec![0.9, 0.1]).unwrap();
        assert_eq!(weighted_quantile(&[0.0, 10.0], &w, tau(0.5)).unwrap(), 0.0);
        assert_eq!(brute_force_argmin(&[0.0, 10.0], &[0.9, 0.1], 0.5), 0.0);

        assert!(
            weighted_quantile(&[1.0], &WeightVector::uniform(vec![4]).unwrap(), tau(0.5)).is_err()
        );
    }

    #[test]
    fn weighted_quantile_matches_brute_force_on_random_instances() {
        let mut rng = seed::rng_from(31);
        for _ in 0..500 {
            let k = rng.random_range(1..=12);
            let values: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(-5..5))).collect();
            let raw: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(1..5))).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let t = f64::from(rng.random_range(1..20)) / 20.0;
            let wv = WeightVector::new((0..k).collect(), weights.clone()).unwrap();
            assert_eq!(
                weighted_quantile(&values, &wv, tau(t)).unwrap(),
                brute_force_argmin(&values, &weights, t)
            );
        }
    }

    #[test]
    fn variance_scaling_examples() {
        let w = WeightVector::uniform((0..4).collect()).unwrap();
        assert!((variance_scaling(&w, 100, 10) - 10.0 / 4.0).abs() < 1e-12);
        let w = WeightVector::uniform(vec![3]).unwrap();
        assert_eq!(variance_scaling(&w, 100, 20), 5.0);
    }

    #[test]
    fn density_examples() {
        let w = WeightVector::uniform(vec![0]).unwrap();
        let f = conditional_density(&[1.5], &w, 1.5, 0.2).unwrap();
        assert!((f - 1.0 / (0.2 * SQRT_2PI)).abs() < 1e-12);

        let far = WeightVector::uniform(vec![0, 1]).unwrap();
        assert_eq!(
            conditional_density(&[100.0, 120.0], &far, 0.0, 1.0).unwrap(),
            DENSITY_FLOOR
        );
        assert!(conditional_density(&[1.0], &w, 0.0, 0.0).is_err());

        let mut rng = seed::rng_from(4);
        let n = 4000;
        let values: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = WeightVector::uniform((0..n).collect()).unwrap();
        let h = default_bandwidth(&values, &w).unwrap();
        let f = conditional_density(&values, &w, 0.0, h).unwrap();
        let phi0 = numeric::normal_pdf(0.0);
        assert!((f - phi0).abs() / phi0 < 0.15, "{f}");
    }

    #[test]
    fn bandwidth_examples() {
        let m = 50;
        // values with weighted (population) variance exactly one
        let values: Vec<f64> = (0..m)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let w = WeightVector::uniform((0..m).collect()).unwrap();
        let h = default_bandwidth(&values, &w).unwrap();
        assert!((h - 1.06 * (m as f64).powf(-0.2)).abs() < 1e-12);

        let w = WeightVector::new(vec![0, 1], vec![1.0 - 1e-12, 1e-12]).unwrap();
        let h = default_bandwidth(&[0.0, 2.0], &w).unwrap();
        let sd = (4.0f64 * 1e-12 * (1.0 - 1e-12)).sqrt();
        assert!((h - 1.06 * sd * w.effective_size().powf(-0.2)).abs() < 1e-15);

        let w = WeightVector::uniform(vec![0, 1, 2]).unwrap();
        assert_eq!(default_bandwidth(&[2.0; 3], &w).unwrap(), 1e-3);
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = interval(0.0, 1.0, 0.01, 0.95).unwrap();
        assert!((hi - 0.195_996_398_454).abs() < 1e-9);
        assert!((lo + 0.195_996_398_454).abs() < 1e-9);

        // floor engaged, eta = n/s, tau = 0.5
        let t = tau(0.5);
        let (n, s) = (1000.0, 50.0);
        let s2 = sigma2(t, n / s, DENSITY_FLOOR);
        let (lo, hi) = interval(3.0, s2, s / n, 0.95).unwrap();
        let expected = 2.0 * 1.959_963_984_540 * (s / n * 0.25 * (n / s) / 1e-8f64).sqrt();
        assert!(((hi - lo) - expected).abs() / expected < 1e-9);
        assert!(interval(0.0, 1.0, 0.1, 1.5).is_err());
    }

    fn gaussian_data(n: usize, seed_value: u64) -> Dataset {
        let mut rng = seed::rng_from(seed_value);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let y = rows
            .iter()
            .map(|r| {
                r[0] + {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e
                }
            })
            .collect::<Vec<f64>>();
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn constant_response_predicts_constant() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(i) / 40.0]).collect();
        let data = Dataset::from_rows(&rows, vec![3.25; 40]).unwrap();
        let cfg = ForestConfig {
            num_trees: 10,
            subsample: Subsample::Size(20),
            min_leaf_est: 2,
            ..ForestConfig::default()
        };
        let model = fit_forest(&data, &cfg).unwrap();
        for x in [0.0, 0.5, 0.9] {
            assert_eq!(predict_quantile(&model, &data, &[x]).unwrap(), 3.25);
        }
    }

    #[test]
    fn single_leaf_tree_gives_empirical_quantile() {
        // identical covariates leave no admissible split
        let mut rng = seed::rng_from(2);
        let rows = vec![vec![0.5, 0.5]; 20];
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let data = Dataset::from_rows(&rows, y).unwrap();
        let cfg = ForestConfig {
            num_trees: 1,
            subsample: Subsample::Size(20),
            min_leaf_est: 5,
            seed: 4,
            tau: tau(0.3),
            ..ForestConfig::default()
        };
        let model = fit_forest(&data, &cfg).unwrap();
        assert_eq!(model.trees()[0].num_leaves(), 1);
        let (_, halves) =
            crate::forest::fit_tree(&data, model.config(), model.features(), 0).unwrap();
        let est_y: Vec<f64> = halves.est.iter().map(|&i| data.y()[i]).collect();
        let expected = crate::forest::empirical_quantile(&est_y, tau(0.3)).unwrap();
        assert_eq!(
            predict_quantile(&model, &data, &[0.5, 0.5]).unwrap(),
            expected
        );
    }

    #[test]
    fn prediction_satisfies_subgradient_optimality() {
        let data = gaussian_data(600, 8);
        let cfg = ForestConfig {
            num_trees: 100,
            subsample: Subsample::Size(120),
            min_leaf_est: 3,
            seed: 1,
            tau: tau(0.7),
            ..ForestConfig::default()
        };
        let model = fit_forest(&data, &cfg).unwrap();
        let mut rng = seed::rng_from(5);
        for _ in 0..50 {
            let x = [rng.random(), rng.random()];
            let w = model.weights(&x).unwrap();
            let q = weighted_quantile(data.y(), &w, cfg.tau).unwrap();
            let score = weighted_score(data.y(), &w, q, cfg.tau);
            assert!(score.abs() <= w.max_weight() + 1e-12, "{score}");
            let p = predict_with_interval(&model, &data, &x, 0.9).unwrap();
            assert_eq!(p.q_hat, q);
            assert!(p.ci_low <= p.q_hat && p.q_hat <= p.ci_high);
            assert!(
                (p.sigma2_hat - 0.21 * p.eta_hat / (p.f_hat * p.f_hat)).abs()
                    <= 1e-12 * p.sigma2_hat
            );
            let dense = w.to_dense(data.n());
            let direct = data.n() as f64 / 120.0 * dense.iter().map(|v| v * v).sum::<f64>();
            assert!((p.eta_hat - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn shifting_responses_shifts_predictions() {
        let data = gaussian_data(300, 9);
        let c = 2.5;
        let shifted = data
            .with_responses(data.y().iter().map(|y| y + c).collect())
            .unwrap();
        let cfg = ForestConfig {
            num_trees: 30,
            subsample: Subsample::Size(100),
            min_leaf_est: 3,
            seed: 2,
            ..ForestConfig::default()
        };
        let a = fit_forest(&data, &cfg).unwrap();
        let b = fit_forest(&shifted, &cfg).unwrap();
        assert_eq!(a.trees(), b.trees());
        for x in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]] {
            let qa = predict_quantile(&a, &data, &x).unwrap();
            let qb = predict_quantile(&b, &shifted, &x).unwrap();
            assert!((qb - qa - c).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn weighted_quantile_is_monotone_in_tau(
            values in proptest::collection::vec(-10.0..10.0f64, 1..12),
            raw in proptest::collection::vec(0.01..1.0f64, 12),
            t1 in 0.01..0.99f64,
            t2 in 0.01..0.99f64,
        ) {
            let k = values.len();
            let total: f64 = raw[..k].iter().sum();
            let w = WeightVector::new((0..k).collect(), raw[..k].iter().map(|v| v / total).collect()).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(weighted_quantile(&values, &w, tau(lo)).unwrap() <= weighted_quantile(&values, &w, tau(hi)).unwrap());
        }
    }
}

//! Cross-fitted variable importance for quantiles.
//!
//! For a feature subset `S` the importance is the excess pinball risk of the
//! best predictor that ignores `X_S`. It is estimated by fitting a full and a
//! restricted forest on one half of the data and averaging the loss
//! difference over the other half. When the subsample exponent exceeds 1/2
//! the estimate carries a deterministic bias of order `n^(beta - 1)`; the
//! plug-in constant `c_hat` built from the forests' variance scaling and
//! conditional densities estimates it.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest_on_features, Dataset, ForestConfig, ForestModel, KernelWorkspace};
use crate::numeric;
use crate::pinball::{self, QuantileLevel};
use crate::quantile::{self, DENSITY_FLOOR};
use crate::seed;

/// Sorted, duplicate-free set of 0-based covariate positions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FeatureSubset(Vec<usize>);

impl FeatureSubset {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate feature in subset".into()));
        }
        Ok(FeatureSubset(indices))
    }

    pub fn empty() -> Self {
        FeatureSubset(Vec::new())
    }

    /// Parses a comma-separated list of 1-based positions; the empty string
    /// is the empty subset.
    pub fn parse_one_based(text: &str) -> Result<Self> {
        let mut indices = Vec::new();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let k: usize = part
                .parse()
                .map_err(|_| Error::InvalidInput(format!("invalid feature position '{part}'")))?;
            if k == 0 {
                return Err(Error::InvalidInput("feature positions are 1-based".into()));
            }
            indices.push(k - 1);
        }
        FeatureSubset::new(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|j| j + 1).collect()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self.0.last() {
            Some(&j) if j >= p => Err(Error::InvalidInput(format!(
                "feature {} out of range for {p} covariates",
                j + 1
            ))),
            _ => Ok(()),
        }
    }

    /// Positions in `0..p` not in the subset.
    pub fn complement(&self, p: usize) -> Vec<usize> {
        (0..p).filter(|j| !self.contains(*j)).collect()
    }
}

impl TryFrom<Vec<usize>> for FeatureSubset {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        FeatureSubset::new(v)
    }
}

impl From<FeatureSubset> for Vec<usize> {
    fn from(s: FeatureSubset) -> Vec<usize> {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitSplit {
    pub train_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
}

/// Uniformly random split of the rows into an evaluation fold of size
/// `floor(n/2)` and a training fold with the rest.
pub fn cross_fit_split<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Result<CrossFitSplit> {
    let n = data.n();
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "cross-fitting needs at least 4 rows, got {n}"
        )));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let train_rows = rows.split_off(n / 2);
    Ok(CrossFitSplit {
        train_rows,
        eval_rows: rows,
    })
}

/// Fits a forest that never splits on the features in `subset`. Query points
/// keep their full dimension; the removed columns are simply ignored.
pub fn fit_restricted(
    data: &Dataset,
    subset: &FeatureSubset,
    config: &ForestConfig,
) -> Result<ForestModel> {
    subset.validate(data.p())?;
    let keep = subset.complement(data.p());
    if keep.is_empty() {
        return Err(Error::InvalidInput(
            "cannot remove every covariate from the restricted model".into(),
        ));
    }
    fit_forest_on_features(data, config, keep)
}

/// Plug-in quantities of one forest at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointNuisance {
    pub q_hat: f64,
    pub eta_hat: f64,
    pub f_hat: f64,
    pub floored: bool,
}

/// Bandwidth used by the forest-weighted density estimates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Rule of thumb evaluated separately at every point.
    #[default]
    RuleOfThumb,
    Fixed(f64),
}

/// Evaluates `q_hat`, `eta_hat` and `f_hat` (at `q_hat`) of `model` at every
/// row of `eval`, with the kernel computed against `train`.
pub fn evaluate_nuisance(
    model: &ForestModel,
    train: &Dataset,
    eval: &Dataset,
    bandwidth: Bandwidth,
) -> Result<Vec<PointNuisance>> {
    model.check_trained_on(train)?;
    if eval.p() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: eval.p(),
        });
    }
    if let Bandwidth::Fixed(h) = bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be positive, got {h}"
            )));
        }
    }
    let tau = model.config().tau;
    let (n, s) = (model.n_train(), model.subsample_size());
    let y = train.y();
    let mut ws = KernelWorkspace::new(n);
    (0..eval.n())
        .map(|i| {
            let w = model.weights_with(eval.row(i), &mut ws)?;
            let q_hat = quantile::weighted_quantile(y, &w, tau)?;
            let eta_hat = quantile::variance_scaling(&w, n, s);
            let h = match bandwidth {
                Bandwidth::Fixed(h) => h,
                Bandwidth::RuleOfThumb if w.len() >= 2 => quantile::default_bandwidth(y, &w)?,
                Bandwidth::RuleOfThumb => 1e-3,
            };
            let f = quantile::conditional_density(y, &w, q_hat, h)?;
            Ok(PointNuisance {
                q_hat,
                eta_hat,
                f_hat: f,
                floored: f <= DENSITY_FLOOR,
            })
        })
        .collect()
}

fn check_folds(train: &Dataset, eval: &Dataset, models: [&ForestModel; 2]) -> Result<()> {
    for m in models {
        m.check_trained_on(train)?;
    }
    let seen: HashSet<[u8; 32]> = (0..train.n()).map(|i| train.row_digest(i)).collect();
    if let Some(i) = (0..eval.n()).find(|&i| seen.contains(&eval.row_digest(i))) {
        return Err(Error::FoldLeakage(format!(
            "evaluation row {i} also appears in the training fold"
        )));
    }
    Ok(())
}

fn check_tau(tau: QuantileLevel, models: [&ForestModel; 2]) -> Result<()> {
    if models.iter().any(|m| m.config().tau != tau) {
        return Err(Error::InvalidInput(
            "models were fitted for a different quantile level".into(),
        ));
    }
    Ok(())
}

/// Per-point loss differences `rho(y - q_restricted) - rho(y - q_full)`.
pub fn loss_differences(
    y: &[f64],
    q_full: &[f64],
    q_restricted: &[f64],
    tau: QuantileLevel,
) -> Vec<f64> {
    y.iter()
        .zip(q_full.iter().zip(q_restricted))
        .map(|(&y, (&qf, &qr))| {
            pinball::loss(y - qr, tau.value()) - pinball::loss(y - qf, tau.value())
        })
        .collect()
}

/// `v_hat` and the per-point contributions on the evaluation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViEstimate {
    pub v_hat: f64,
    pub per_point: Vec<f64>,
}

impl ViEstimate {
    pub fn from_per_point(per_point: Vec<f64>) -> Result<Self> {
        if per_point.is_empty() {
            return Err(Error::InvalidInput("empty evaluation fold".into()));
        }
        let v_hat = per_point.iter().sum::<f64>() / per_point.len() as f64;
        Ok(ViEstimate { v_hat, per_point })
    }
}

/// `V_hat(S) = mean_i { rho(Y_i - q_restricted(X_i)) - rho(Y_i - q_full(X_i)) }`
/// over the evaluation fold, with both forests fitted on `train`.
pub fn vi_estimate(
    train: &Dataset,
    eval: &Dataset,
    full: &ForestModel,
    restricted: &ForestModel,
    tau: QuantileLevel,
) -> Result<ViEstimate> {
    check_tau(tau, [full, restricted])?;
    check_folds(train, eval, [full, restricted])?;
    let predict = |m: &ForestModel| -> Result<Vec<f64>> {
        let mut ws = KernelWorkspace::new(m.n_train());
        (0..eval.n())
            .map(|i| {
                let w = m.weights_with(eval.row(i), &mut ws)?;
                quantile::weighted_quantile(train.y(), &w, tau)
            })
            .collect()
    };
    let q_full = predict(full)?;
    let q_restricted = predict(restricted)?;
    ViEstimate::from_per_point(loss_differences(eval.y(), &q_full, &q_restricted, tau))
}

/// Sample variance (divisor `n - 1`) of the per-point contributions.
pub fn vi_variance(per_point: &[f64]) -> Result<f64> {
    if per_point.len() < 2 {
        return Err(Error::InvalidInput(
            "variance needs at least two evaluation points".into(),
        ));
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &v) in per_point.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    Ok(m2 / (per_point.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub c_hat: f64,
    /// Fraction of density evaluations (over both forests) clamped at the floor.
    pub floored_fraction: f64,
    pub warning: Option<String>,
}

/// `C_hat = tau (1 - tau) / (2n) * sum_i (eta_r / f_r - eta / f)` from
/// per-point plug-in quantities of the full and restricted forests.
pub fn bias_constant_from_nuisance(
    tau: QuantileLevel,
    full: &[PointNuisance],
    restricted: &[PointNuisance],
) -> Result<BiasEstimate> {
    if full.len() != restricted.len() || full.is_empty() {
        return Err(Error::InvalidInput(
            "nuisance evaluations must cover the same nonempty fold".into(),
        ));
    }
    let n = full.len() as f64;
    let sum: f64 = full
        .iter()
        .zip(restricted)
        .map(|(f, r)| r.eta_hat / r.f_hat - f.eta_hat / f.f_hat)
        .sum();
    let floored = full.iter().chain(restricted).filter(|p| p.floored).count();
    let floored_fraction = floored as f64 / (2.0 * n);
    let warning = (floored_fraction > 0.5).then(|| {
        format!(
            "density floor engaged on {:.0}% of evaluations; c_hat is unreliable",
            100.0 * floored_fraction
        )
    });
    Ok(BiasEstimate {
        c_hat: tau.score_variance() / (2.0 * n) * sum,
        floored_fraction,
        warning,
    })
}

/// Plug-in bias constant; the restricted density is evaluated at the
/// restricted forest's own prediction.
pub fn bias_constant_estimate(
    train: &Dataset,
    eval: &Dataset,
    full: &ForestModel,
    restricted: &ForestModel,
    tau: QuantileLevel,
    bandwidth: Bandwidth,
) -> Result<BiasEstimate> {
    check_tau(tau, [full, restricted])?;
    check_folds(train, eval, [full, restricted])?;
    let nf = evaluate_nuisance(full, train, eval, bandwidth)?;
    let nr = evaluate_nuisance(restricted, train, eval, bandwidth)?;
    bias_constant_from_nuisance(tau, &nf, &nr)
}

/// `V_tilde = V_hat - n^(beta - 1) * C_hat`.
pub fn bias_corrected_vi(v_hat: f64, c_hat: f64, n_eval: usize, beta: f64) -> f64 {
    v_hat - (n_eval as f64).powf(beta - 1.0) * c_hat
}

/// `center +- z_{(1+level)/2} * sigma / sqrt(n_eval)`.
pub fn vi_confidence_interval(
    center: f64,
    sigma: f64,
    n_eval: usize,
    level: f64,
) -> Result<(f64, f64)> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidInput(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    if n_eval == 0 {
        return Err(Error::InvalidInput("empty evaluation fold".into()));
    }
    let half = numeric::two_sided_z(level)? * sigma / (n_eval as f64).sqrt();
    Ok((center - half, center + half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VimpReport {
    /// 1-based positions of the removed features.
    pub subset: Vec<usize>,
    pub tau: f64,
    pub level: f64,
    pub v_hat: f64,
    pub sigma_s_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub c_hat: f64,
    pub v_tilde: f64,
    pub ci_corrected_low: f64,
    pub ci_corrected_high: f64,
    pub beta_used: f64,
    pub n_eval: usize,
    pub n_train: usize,
    pub subsample_size: usize,
    pub density_floor_fraction: f64,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_point_losses: Option<Vec<f64>>,
}

/// Everything one cross-fitted importance computation produces.
#[derive(Debug, Clone)]
pub struct CrossFitOutcome {
    pub report: VimpReport,
    pub split: CrossFitSplit,
    pub full: PointSeries,
    pub restricted: PointSeries,
}

/// Per-evaluation-point plug-in values of one forest.
#[derive(Debug, Clone, Default)]
pub struct PointSeries(pub Vec<PointNuisance>);

impl PointSeries {
    pub fn q_hat(&self) -> Vec<f64> {
        self.0.iter().map(|p| p.q_hat).collect()
    }
}

/// Options of [`cross_fitted_vimp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VimpOptions {
    pub level: f64,
    pub bandwidth: Bandwidth,
    /// Seed of the fold assignment.
    pub split_seed: u64,
    pub keep_per_point: bool,
}

impl VimpOptions {
    /// Options whose fold assignment is derived from the forest seed, so a
    /// single user-facing seed fixes the whole run.
    pub fn seeded_from(forest_seed: u64) -> Self {
        VimpOptions {
            split_seed: crate::seed::derive(forest_seed, &[SPLIT_SALT]),
            ..VimpOptions::default()
        }
    }
}

const SPLIT_SALT: u64 = 0x0053_504c_4954;

impl Default for VimpOptions {
    fn default() -> Self {
        VimpOptions {
            level: 0.95,
            bandwidth: Bandwidth::RuleOfThumb,
            split_seed: 0,
            keep_per_point: false,
        }
    }
}

/// Full pipeline: split, fit both forests on the training fold, score the
/// evaluation fold, estimate the bias constant and build both intervals.
pub fn cross_fitted_vimp(
    data: &Dataset,
    subset: &FeatureSubset,
    config: &ForestConfig,
    options: &VimpOptions,
) -> Result<CrossFitOutcome> {
    subset.validate(data.p())?;
    if subset.len() >= data.p() {
        return Err(Error::InvalidInput(
            "subset removes every covariate; nothing left for the restricted model".into(),
        ));
    }
    numeric::two_sided_z(options.level)?;
    let split = cross_fit_split(data, &mut seed::rng_from(options.split_seed))?;
    let train = data.select_rows(&split.train_rows)?;
    let eval = data.select_rows(&split.eval_rows)?;
    let (full, restricted) = rayon::join(
        || fit_forest_on_features(&train, config, (0..data.p()).collect()),
        || fit_restricted(&train, subset, config),
    );
    let (full, restricted) = (full?, restricted?);
    let mut outcome = score_folds(&train, &eval, &full, &restricted, subset, options)?;
    outcome.split = split;
    Ok(outcome)
}

/// Scores an already split and fitted pair of forests.
pub fn score_folds(
    train: &Dataset,
    eval: &Dataset,
    full: &ForestModel,
    restricted: &ForestModel,
    subset: &FeatureSubset,
    options: &VimpOptions,
) -> Result<CrossFitOutcome> {
    let tau = full.config().tau;
    check_tau(tau, [full, restricted])?;
    check_folds(train, eval, [full, restricted])?;
    let (nf, nr) = rayon::join(
        || evaluate_nuisance(full, train, eval, options.bandwidth),
        || evaluate_nuisance(restricted, train, eval, options.bandwidth),
    );
    let (nf, nr) = (PointSeries(nf?), PointSeries(nr?));
    let estimate =
        ViEstimate::from_per_point(loss_differences(eval.y(), &nf.q_hat(), &nr.q_hat(), tau))?;
    let sigma_s_hat = vi_variance(&estimate.per_point)?.sqrt();
    let bias = bias_constant_from_nuisance(tau, &nf.0, &nr.0)?;
    let n_eval = eval.n();
    let beta = full.config().beta;
    let v_tilde = bias_corrected_vi(estimate.v_hat, bias.c_hat, n_eval, beta);
    let (ci_low, ci_high) =
        vi_confidence_interval(estimate.v_hat, sigma_s_hat, n_eval, options.level)?;
    let (ci_corrected_low, ci_corrected_high) =
        vi_confidence_interval(v_tilde, sigma_s_hat, n_eval, options.level)?;
    let mut warnings = full.warnings();
    warnings.extend(bias.warning.clone());
    let report = VimpReport {
        subset: subset.one_based(),
        tau: tau.value(),
        level: options.level,
        v_hat: estimate.v_hat,
        sigma_s_hat,
        ci_low,
        ci_high,
        c_hat: bias.c_hat,
        v_tilde,
        ci_corrected_low,
        ci_corrected_high,
        beta_used: beta,
        n_eval,
        n_train: train.n(),
        subsample_size: full.subsample_size(),
        density_floor_fraction: bias.floored_fraction,
        warnings,
        per_point_losses: options.keep_per_point.then_some(estimate.per_point),
    };
    Ok(CrossFitOutcome {
        report,
        split: CrossFitSplit {
            train_rows: Vec::new(),
            eval_rows: Vec::new(),
        },
        full: nf,
        restricted: nr,
    })
}

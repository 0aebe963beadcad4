//! Analytic and quadrature ground truth for the simulation processes.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::numeric::{self, normal_cdf, normal_pdf, normal_quantile};
use crate::pinball::{self, QuantileLevel};
use crate::seed;
use crate::vimp::FeatureSubset;

const QUAD_TOL: f64 = 1e-12;
const ROOT_TOL: f64 = 1e-10;
const TABLE_POINTS: usize = 2049;

fn check_point(spec: &DgpSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.p() {
        return Err(Error::DimensionMismatch {
            expected: spec.p(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("oracle point outside [0, 1]^p".into()));
    }
    Ok(())
}

/// Conditional quantile `c'x + sigma(x) z_tau`.
pub fn oracle_quantile(spec: &DgpSpec, tau: QuantileLevel, x: &[f64]) -> Result<f64> {
    check_point(spec, x)?;
    Ok(spec.mean(x) + spec.scale(x) * normal_quantile(tau.value()))
}

/// `E[rho_tau(eps - t)]` for standard normal `eps`: `phi(t) + t (Phi(t) - tau)`.
pub fn expected_standard_loss(t: f64, tau: f64) -> f64 {
    normal_pdf(t) + t * (normal_cdf(t) - tau)
}

/// Expected pinball loss of predicting `theta` at `x`.
pub fn expected_pinball(spec: &DgpSpec, tau: QuantileLevel, x: &[f64], theta: f64) -> f64 {
    let sigma = spec.scale(x);
    sigma * expected_standard_loss((theta - spec.mean(x)) / sigma, tau.value())
}

/// Removed covariates that actually move the conditional law.
fn active(spec: &DgpSpec, subset: &FeatureSubset) -> Result<Vec<usize>> {
    subset.validate(spec.p())?;
    Ok(subset
        .indices()
        .iter()
        .copied()
        .filter(|&j| spec.depends_on(j))
        .collect())
}

/// `P(Y <= y | X_{-S} = x_{-S})`, integrating the active removed
/// coordinates over their uniform law.
fn mixture_cdf(spec: &DgpSpec, x: &[f64], act: &[usize], y: f64) -> Result<f64> {
    let point = RefCell::new(x.to_vec());
    let f = |u: &[f64]| {
        let mut pt = point.borrow_mut();
        for (&j, &v) in act.iter().zip(u) {
            pt[j] = v;
        }
        normal_cdf((y - spec.mean(&pt)) / spec.scale(&pt))
    };
    numeric::integrate_unit_cube(act.len(), &f, QUAD_TOL)
}

fn restricted_quantile_active(
    spec: &DgpSpec,
    tau: QuantileLevel,
    x: &[f64],
    act: &[usize],
) -> Result<f64> {
    let z = normal_quantile(tau.value());
    if act.is_empty() {
        return Ok(spec.mean(x) + spec.scale(x) * z);
    }
    // The mixture quantile lies between the extreme component quantiles,
    // which are attained at corners since c'x + sigma(x) z is affine.
    let mut corner = x.to_vec();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for mask in 0u64..(1u64 << act.len()) {
        for (k, &j) in act.iter().enumerate() {
            corner[j] = ((mask >> k) & 1) as f64;
        }
        let q = spec.mean(&corner) + spec.scale(&corner) * z;
        lo = lo.min(q);
        hi = hi.max(q);
    }
    let mut failure = None;
    let root = numeric::bisect_increasing(
        |y| match mixture_cdf(spec, x, act, y) {
            Ok(v) => v - tau.value(),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        lo - 1e-6,
        hi + 1e-6,
        ROOT_TOL,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(root),
    }
}

/// `tau`-quantile of `Y` given `X_{-S} = x_{-S}`; the entries of `x` in `S`
/// are ignored.
pub fn oracle_restricted_quantile(
    spec: &DgpSpec,
    tau: QuantileLevel,
    x: &[f64],
    subset: &FeatureSubset,
) -> Result<f64> {
    check_point(spec, x)?;
    let act = active(spec, subset)?;
    restricted_quantile_active(spec, tau, x, &act)
}

#[derive(Debug, Clone)]
enum Offset {
    /// Removed covariates do not matter.
    Unrestricted,
    Constant(f64),
    /// Offset depends on the first covariate; tabulated on a uniform grid.
    Table(Vec<f64>),
}

/// Fast evaluator of `q_{tau,-S}` for repeated use.
///
/// For these processes `q_{-S}(x) = sum_{j not removed} c_j x_j + kappa`,
/// where `kappa` is constant unless the noise scale depends on a retained
/// first covariate.
#[derive(Debug, Clone)]
pub struct RestrictedOracle {
    spec: DgpSpec,
    tau: QuantileLevel,
    active: Vec<usize>,
    offset: Offset,
}

impl RestrictedOracle {
    pub fn new(spec: &DgpSpec, tau: QuantileLevel, subset: &FeatureSubset) -> Result<Self> {
        let act = active(spec, subset)?;
        let offset = if act.is_empty() {
            Offset::Unrestricted
        } else if spec.is_heteroscedastic() && !act.contains(&0) {
            let values = (0..TABLE_POINTS)
                .into_par_iter()
                .map(|k| kappa(spec, tau, &act, k as f64 / (TABLE_POINTS - 1) as f64))
                .collect::<Result<Vec<_>>>()?;
            Offset::Table(values)
        } else {
            Offset::Constant(kappa(spec, tau, &act, 0.0)?)
        };
        Ok(RestrictedOracle {
            spec: spec.clone(),
            tau,
            active: act,
            offset,
        })
    }

    fn retained_mean(&self, x: &[f64]) -> f64 {
        (0..self.spec.p())
            .filter(|j| !self.active.contains(j))
            .map(|j| self.spec.coefficient(j) * x[j])
            .sum()
    }

    pub fn quantile(&self, x: &[f64]) -> f64 {
        match &self.offset {
            Offset::Unrestricted => {
                self.spec.mean(x) + self.spec.scale(x) * normal_quantile(self.tau.value())
            }
            Offset::Constant(k) => self.retained_mean(x) + k,
            Offset::Table(t) => {
                let pos = x[0].clamp(0.0, 1.0) * (t.len() - 1) as f64;
                let i = (pos.floor() as usize).min(t.len() - 2);
                let w = pos - i as f64;
                self.retained_mean(x) + (1.0 - w) * t[i] + w * t[i + 1]
            }
        }
    }
}

/// `q_{-S}(x) - sum_{j retained} c_j x_j` at a point whose retained
/// coordinates are zero except the first, which is `x1`.
fn kappa(spec: &DgpSpec, tau: QuantileLevel, act: &[usize], x1: f64) -> Result<f64> {
    let mut x = vec![0.0; spec.p()];
    x[0] = x1;
    let q = restricted_quantile_active(spec, tau, &x, act)?;
    let retained = if act.contains(&0) {
        0.0
    } else {
        spec.coefficient(0) * x1
    };
    Ok(q - retained)
}

/// Population importance `V_tau(S) = E[rho(Y - q_{-S}(X)) - rho(Y - q(X))]`
/// by quadrature over the covariates that matter.
pub fn oracle_vi(spec: &DgpSpec, tau: QuantileLevel, subset: &FeatureSubset) -> Result<f64> {
    let act = active(spec, subset)?;
    if act.is_empty() {
        return Ok(0.0);
    }
    let t = tau.value();
    let base = normal_pdf(normal_quantile(t));
    let inner = |x1: f64, k: f64| -> Result<f64> {
        let point = RefCell::new({
            let mut v = vec![0.0; spec.p()];
            v[0] = x1;
            v
        });
        let f = |u: &[f64]| {
            let mut pt = point.borrow_mut();
            let mut shift = 0.0;
            for (&j, &v) in act.iter().zip(u) {
                pt[j] = v;
                shift += spec.coefficient(j) * v;
            }
            let sigma = spec.scale(&pt);
            sigma * (expected_standard_loss((k - shift) / sigma, t) - base)
        };
        numeric::integrate_unit_cube(act.len(), &f, QUAD_TOL)
    };
    if spec.is_heteroscedastic() && !act.contains(&0) {
        let mut failure = None;
        let v = numeric::integrate(
            |x1| match kappa(spec, tau, &act, x1).and_then(|k| inner(x1, k)) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            1.0,
            1e-11,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(v),
        }
    } else {
        inner(0.0, kappa(spec, tau, &act, 0.0)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

impl MonteCarloEstimate {
    /// Mean and standard error of `values` (divisor `n - 1`).
    pub fn from_sums(sum: f64, sum_sq_dev: f64, draws: usize) -> Self {
        let mean = sum / draws as f64;
        let var = if draws > 1 {
            sum_sq_dev / (draws - 1) as f64
        } else {
            0.0
        };
        MonteCarloEstimate {
            mean,
            std_error: (var / draws as f64).sqrt(),
            draws,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss = values.iter().map(|v| (v - mean).powi(2)).sum();
        Self::from_sums(mean * n as f64, ss, n)
    }
}

const MC_CHUNKS: u64 = 64;

/// Per-chunk (count, mean, centered sum of squares), merged in chunk order.
fn chunked_monte_carlo<F>(draws: usize, seed: u64, per_draw: F) -> MonteCarloEstimate
where
    F: Fn(&mut seed::StreamRng) -> f64 + Sync,
{
    let parts: Vec<(usize, f64, f64)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let lo = draws as u64 * c / MC_CHUNKS;
            let hi = draws as u64 * (c + 1) / MC_CHUNKS;
            let mut rng = seed::stream(seed, c);
            let (mut mean, mut m2) = (0.0, 0.0);
            for k in 0..(hi - lo) {
                let v = per_draw(&mut rng);
                let d = v - mean;
                mean += d / (k + 1) as f64;
                m2 += d * (v - mean);
            }
            ((hi - lo) as usize, mean, m2)
        })
        .collect();
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for (nb, mb, m2b) in parts {
        if nb == 0 {
            continue;
        }
        let total = n + nb;
        let d = mb - mean;
        mean += d * nb as f64 / total as f64;
        m2 += m2b + d * d * (n as f64) * (nb as f64) / total as f64;
        n = total;
    }
    MonteCarloEstimate::from_sums(mean * n as f64, m2, n)
}

/// Plain Monte Carlo of the importance: draws `(X, Y)` and averages the
/// pinball loss difference between the restricted and full oracles.
pub fn oracle_vi_monte_carlo(
    spec: &DgpSpec,
    tau: QuantileLevel,
    subset: &FeatureSubset,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if draws < 2 {
        return Err(Error::InvalidInput("need at least two draws".into()));
    }
    let restricted = RestrictedOracle::new(spec, tau, subset)?;
    let z = normal_quantile(tau.value());
    let t = tau.value();
    Ok(chunked_monte_carlo(draws, seed, |rng| {
        let mut x = vec![0.0; spec.p()];
        spec.sample_covariates(rng, &mut x);
        let y = spec.sample_response(&x, rng);
        let q = spec.mean(&x) + spec.scale(&x) * z;
        pinball::loss(y - restricted.quantile(&x), t) - pinball::loss(y - q, t)
    }))
}

/// Finite-difference derivative of the Monte Carlo risk at the true
/// quantile in the constant direction, against the spread of the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateauxCheck {
    pub derivative: f64,
    pub score_mean: f64,
    pub score_std_error: f64,
    pub step: f64,
    pub draws: usize,
}

impl GateauxCheck {
    /// `|derivative| <= k` standard errors of the mean score.
    pub fn within(&self, k: f64) -> bool {
        self.derivative.abs() <= k * self.score_std_error
    }
}

/// `(R(q + t h) - R(q)) / t` with `h = 1`, using common draws for both risks.
pub fn gateaux_check(
    spec: &DgpSpec,
    tau: QuantileLevel,
    step: f64,
    draws: usize,
    seed: u64,
) -> Result<GateauxCheck> {
    if step.is_nan() || step <= 0.0 || draws < 2 {
        return Err(Error::InvalidInput(
            "need a positive step and at least two draws".into(),
        ));
    }
    let z = normal_quantile(tau.value());
    let t = tau.value();
    // Residual against the true quantile; both passes replay the same draws.
    let residual = |rng: &mut seed::StreamRng| {
        let mut x = vec![0.0; spec.p()];
        spec.sample_covariates(rng, &mut x);
        let y = spec.sample_response(&x, rng);
        y - spec.mean(&x) - spec.scale(&x) * z
    };
    let diff = chunked_monte_carlo(draws, seed, |rng| {
        let u = residual(rng);
        (pinball::loss(u - step, t) - pinball::loss(u, t)) / step
    });
    let score = chunked_monte_carlo(draws, seed, |rng| pinball::psi(residual(rng), t));
    Ok(GateauxCheck {
        derivative: diff.mean,
        score_mean: score.mean,
        score_std_error: score.std_error,
        step,
        draws,
    })
}

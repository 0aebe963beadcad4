use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{default_names, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// `Y = c'X + sigma * eps`.
    LinearGaussian,
    /// As `LinearGaussian`, with at least one trailing zero-coefficient covariate.
    LinearNoiseFeatures,
    /// `Y = c'X + sigma * (1 + X_1) * eps`.
    Heteroscedastic,
}

/// Data-generating process with covariates uniform on `[0, 1]^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDgpSpec", into = "RawDgpSpec")]
pub struct DgpSpec {
    kind: DgpKind,
    coefficients: Vec<f64>,
    noise_scale: f64,
    p: usize,
}

#[derive(Serialize, Deserialize)]
struct RawDgpSpec {
    kind: DgpKind,
    coefficients: Vec<f64>,
    noise_scale: f64,
    p: usize,
}

impl TryFrom<RawDgpSpec> for DgpSpec {
    type Error = Error;

    fn try_from(r: RawDgpSpec) -> Result<Self> {
        DgpSpec::new(r.kind, r.coefficients, r.noise_scale, r.p)
    }
}

impl From<DgpSpec> for RawDgpSpec {
    fn from(d: DgpSpec) -> Self {
        RawDgpSpec {
            kind: d.kind,
            coefficients: d.coefficients,
            noise_scale: d.noise_scale,
            p: d.p,
        }
    }
}

impl DgpSpec {
    /// Covariates past the given coefficients have coefficient zero.
    pub fn new(kind: DgpKind, coefficients: Vec<f64>, noise_scale: f64, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("dgp needs at least one covariate".into()));
        }
        if coefficients.len() > p {
            return Err(Error::Config(format!(
                "{} coefficients for {p} covariates",
                coefficients.len()
            )));
        }
        if kind == DgpKind::LinearNoiseFeatures && coefficients.len() == p {
            return Err(Error::Config(
                "linear_noise_features needs fewer coefficients than covariates".into(),
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        if !(noise_scale > 0.0 && noise_scale.is_finite()) {
            return Err(Error::Config(format!(
                "noise_scale must be positive, got {noise_scale}"
            )));
        }
        Ok(DgpSpec {
            kind,
            coefficients,
            noise_scale,
            p,
        })
    }

    pub fn linear_gaussian(coefficients: Vec<f64>, noise_scale: f64, p: usize) -> Result<Self> {
        DgpSpec::new(DgpKind::LinearGaussian, coefficients, noise_scale, p)
    }

    pub fn heteroscedastic(coefficients: Vec<f64>, noise_scale: f64, p: usize) -> Result<Self> {
        DgpSpec::new(DgpKind::Heteroscedastic, coefficients, noise_scale, p)
    }

    pub fn kind(&self) -> DgpKind {
        self.kind
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Coefficient of covariate `j` (0-based), zero past the declared ones.
    pub fn coefficient(&self, j: usize) -> f64 {
        self.coefficients.get(j).copied().unwrap_or(0.0)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn is_heteroscedastic(&self) -> bool {
        self.kind == DgpKind::Heteroscedastic
    }

    /// Conditional mean `c'x`.
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Conditional noise scale at `x`.
    pub fn scale(&self, x: &[f64]) -> f64 {
        match self.kind {
            DgpKind::Heteroscedastic => self.noise_scale * (1.0 + x[0]),
            _ => self.noise_scale,
        }
    }

    /// Whether the law of `Y` given `X` changes with covariate `j`.
    pub fn depends_on(&self, j: usize) -> bool {
        self.coefficient(j) != 0.0 || (self.is_heteroscedastic() && j == 0)
    }

    pub fn sample_covariates<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = rng.random::<f64>();
        }
    }

    pub fn sample_response<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.mean(x) + self.scale(x) * e
    }
}

/// `n` i.i.d. draws from the process.
pub fn generate<R: Rng + ?Sized>(spec: &DgpSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    let p = spec.p();
    let mut x = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    for row in x.chunks_exact_mut(p) {
        spec.sample_covariates(rng, row);
        y.push(spec.sample_response(row, rng));
    }
    Dataset::new(x, p, y, default_names(p))
}

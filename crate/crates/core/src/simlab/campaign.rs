//! Replicated simulation campaigns over `(n, beta)` grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, DgpSpec};
use super::oracle::{oracle_quantile, oracle_vi};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, Subsample};
use crate::numeric::{self, normal_quantile};
use crate::pinball::QuantileLevel;
use crate::quantile;
use crate::seed;
use crate::vimp::{cross_fitted_vimp, FeatureSubset, VimpOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Campaign {
    PhaseTransition,
    Normality,
    BiasScaling,
}

impl Campaign {
    pub fn name(self) -> &'static str {
        match self {
            Campaign::PhaseTransition => "phase_transition",
            Campaign::Normality => "normality",
            Campaign::BiasScaling => "bias_scaling",
        }
    }
}

pub const DEFAULT_SIM_TREES: usize = 500;

/// Forest settings applied to every replication; unset fields take the
/// forest defaults (except the tree count, which defaults to 500).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_leaf_est: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
}

fn default_level() -> f64 {
    0.95
}

/// One simulation campaign.
///
/// For the importance campaigns `n` is the size of each cross-fitting fold,
/// so every replication draws `2n` rows. For the normality campaign `n` is
/// the training size of the single forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub campaign: Campaign,
    pub dgp: DgpSpec,
    pub tau: QuantileLevel,
    pub n_grid: Vec<usize>,
    pub beta_grid: Vec<f64>,
    pub replications: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    /// 1-based positions of the removed covariates.
    #[serde(default)]
    pub subset: Vec<usize>,
    #[serde(default)]
    pub forest: ForestOverrides,
    /// Query points of the normality campaign.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn subset(&self) -> Result<FeatureSubset> {
        if self.subset.contains(&0) {
            return Err(Error::Config("subset positions are 1-based".into()));
        }
        let s = FeatureSubset::new(self.subset.iter().map(|j| j - 1).collect())
            .map_err(|e| Error::Config(e.to_string()))?;
        s.validate(self.dgp.p())
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_grid.is_empty() || self.beta_grid.is_empty() {
            return bad("n_grid and beta_grid must be nonempty".into());
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if let Some(b) = self.beta_grid.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return bad(format!("beta {b} outside (0, 1)"));
        }
        if let Some(n) = self.n_grid.iter().find(|n| **n < 4) {
            return bad(format!("sample size {n} below 4"));
        }
        numeric::two_sided_z(self.level).map_err(|e| Error::Config(e.to_string()))?;
        let subset = self.subset()?;
        match self.campaign {
            Campaign::Normality => {
                if self.probes.is_empty() {
                    return bad("normality campaign needs probe points".into());
                }
                for p in &self.probes {
                    if p.len() != self.dgp.p() || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return bad(format!(
                            "probe {p:?} is not a point of [0, 1]^{}",
                            self.dgp.p()
                        ));
                    }
                }
            }
            Campaign::PhaseTransition | Campaign::BiasScaling => {
                if subset.len() >= self.dgp.p() {
                    return bad("subset removes every covariate".into());
                }
            }
        }
        if self.campaign == Campaign::BiasScaling {
            if self.n_grid.len() < 3 {
                return bad("bias scaling needs at least three sample sizes".into());
            }
            if self.beta_grid.iter().any(|b| *b <= 0.5) {
                return bad("bias scaling needs beta > 1/2".into());
            }
        }
        for (n, beta) in self.cells() {
            self.forest_config(beta, 0)
                .resolve(n, self.dgp.p())
                .map_err(|e| Error::Config(format!("n={n}, beta={beta}: {e}")))?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(usize, f64)> {
        self.n_grid
            .iter()
            .flat_map(|&n| self.beta_grid.iter().map(move |&b| (n, b)))
            .collect()
    }

    pub fn forest_config(&self, beta: f64, seed: u64) -> ForestConfig {
        let d = ForestConfig::default();
        ForestConfig {
            num_trees: self.forest.num_trees.unwrap_or(DEFAULT_SIM_TREES),
            subsample: Subsample::Rate(beta),
            alpha: self.forest.alpha.unwrap_or(d.alpha),
            min_leaf_est: self.forest.min_leaf_est.unwrap_or(d.min_leaf_est),
            mtry: self.forest.mtry,
            seed,
            tau: self.tau,
        }
    }

    /// Seed of replication `rep` in cell `(n, beta)`.
    pub fn replication_seed(&self, n: usize, beta: f64, rep: usize) -> u64 {
        seed::derive(self.seed, &[n as u64, beta.to_bits(), rep as u64])
    }
}

/// One importance replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VimpRecord {
    pub n: usize,
    pub beta: f64,
    pub rep: usize,
    pub seed: u64,
    pub subsample_size: usize,
    pub v_hat: f64,
    pub v_tilde: f64,
    pub c_hat: f64,
    pub sigma_s_hat: f64,
    pub hit_raw: bool,
    pub hit_corrected: bool,
    /// `n^(1 - beta) (v_hat - V)`.
    pub scaled_error: f64,
    pub floor_fraction: f64,
}

/// One probe point in one normality replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub n: usize,
    pub beta: f64,
    pub rep: usize,
    pub seed: u64,
    pub subsample_size: usize,
    pub probe: usize,
    pub q_hat: f64,
    pub q_true: f64,
    pub sigma_hat: f64,
    /// `sqrt(n/s) (q_hat - q) / sigma_hat`.
    pub z: f64,
    pub hit: bool,
    /// Density floor engaged; excluded from the normality summaries.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "snake_case")]
pub enum Records {
    Vimp(Vec<VimpRecord>),
    Probe(Vec<ProbeRecord>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub n: usize,
    pub beta: f64,
    pub rep: usize,
    pub seed: u64,
    pub message: String,
}

/// Empirical proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub estimate: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Proportion {
    pub fn new(hits: usize, count: usize) -> Self {
        let c = if count == 0 {
            f64::NAN
        } else {
            hits as f64 / count as f64
        };
        Proportion {
            estimate: c,
            std_error: (c * (1.0 - c) / count as f64).sqrt(),
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub beta: f64,
    pub subsample_size: usize,
    pub replications: usize,
    pub failures: usize,
    pub coverage_raw: Proportion,
    pub coverage_corrected: Proportion,
    pub mean_v_hat: f64,
    pub mean_v_tilde: f64,
    pub mean_c_hat: f64,
    pub mean_sigma_s_hat: f64,
    /// Mean of `v_hat - V`.
    pub mean_error: f64,
    pub mean_abs_error: f64,
    pub mean_abs_error_corrected: f64,
    pub mean_scaled_error: f64,
    pub mean_abs_scaled_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub n: usize,
    pub beta: f64,
    pub probe: usize,
    pub point: Vec<f64>,
    pub q_true: f64,
    pub used: usize,
    pub excluded: usize,
    pub qq_correlation: f64,
    pub coverage: Proportion,
    pub mean_z: f64,
    pub sd_z: f64,
    pub fraction_within_196: f64,
}

/// Least-squares fit of `log mean|v_hat - V|` on `log n` at one `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub beta: f64,
    pub slope: f64,
    pub std_error: Option<f64>,
    pub intercept: f64,
    pub n: Vec<usize>,
    pub mean_abs_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub campaign: Campaign,
    pub tau: f64,
    pub level: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_v: Option<f64>,
    pub replications_run: usize,
    pub replications_failed: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub cells: Vec<CellSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub probes: Vec<ProbeSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub slopes: Vec<SlopeFit>,
    pub failures: Vec<FailedReplication>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub config: SimConfig,
    pub records: Records,
    pub summary: SimSummary,
}

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.10;

struct Task {
    n: usize,
    beta: f64,
    rep: usize,
    seed: u64,
}

fn tasks(config: &SimConfig) -> Vec<Task> {
    config
        .cells()
        .into_iter()
        .flat_map(|(n, beta)| (0..config.replications).map(move |rep| (n, beta, rep)))
        .map(|(n, beta, rep)| Task {
            n,
            beta,
            rep,
            seed: config.replication_seed(n, beta, rep),
        })
        .collect()
}

/// Runs every task in parallel, keeping grid order, and enforces the
/// failure budget.
/// Successful outputs tagged with their task index, and the failures.
type TaskOutcome<T> = (Vec<(usize, T)>, Vec<FailedReplication>);

fn run_tasks<T, F>(config: &SimConfig, run: F) -> Result<TaskOutcome<T>>
where
    T: Send,
    F: Fn(&Task) -> Result<T> + Sync,
{
    let tasks = tasks(config);
    let total = tasks.len();
    let outcomes: Vec<Result<T>> = tasks.par_iter().map(&run).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (k, (task, outcome)) in tasks.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(v) => ok.push((k, v)),
            Err(e) => failed.push(FailedReplication {
                n: task.n,
                beta: task.beta,
                rep: task.rep,
                seed: task.seed,
                message: e.to_string(),
            }),
        }
    }
    if failed.len() as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::Numerical(format!(
            "{} of {total} replications failed (first: {})",
            failed.len(),
            failed[0].message
        )));
    }
    Ok((ok, failed))
}

fn vimp_replication(
    config: &SimConfig,
    subset: &FeatureSubset,
    v: f64,
    task: &Task,
) -> Result<VimpRecord> {
    let data = generate(
        &config.dgp,
        2 * task.n,
        &mut seed::rng_from(seed::derive(task.seed, &[1])),
    )?;
    let options = VimpOptions {
        level: config.level,
        split_seed: seed::derive(task.seed, &[2]),
        ..VimpOptions::default()
    };
    let forest = config.forest_config(task.beta, seed::derive(task.seed, &[3]));
    let r = cross_fitted_vimp(&data, subset, &forest, &options)?.report;
    let contains = |lo: f64, hi: f64| lo <= v && v <= hi;
    Ok(VimpRecord {
        n: task.n,
        beta: task.beta,
        rep: task.rep,
        seed: task.seed,
        subsample_size: r.subsample_size,
        v_hat: r.v_hat,
        v_tilde: r.v_tilde,
        c_hat: r.c_hat,
        sigma_s_hat: r.sigma_s_hat,
        hit_raw: contains(r.ci_low, r.ci_high),
        hit_corrected: contains(r.ci_corrected_low, r.ci_corrected_high),
        scaled_error: (r.n_eval as f64).powf(1.0 - r.beta_used) * (r.v_hat - v),
        floor_fraction: r.density_floor_fraction,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

fn summarize_cells(
    config: &SimConfig,
    records: &[VimpRecord],
    failures: &[FailedReplication],
    v: f64,
) -> Vec<CellSummary> {
    config
        .cells()
        .into_iter()
        .map(|(n, beta)| {
            let rs: Vec<&VimpRecord> = records
                .iter()
                .filter(|r| r.n == n && r.beta == beta)
                .collect();
            let k = rs.len();
            CellSummary {
                n,
                beta,
                subsample_size: rs.first().map_or(0, |r| r.subsample_size),
                replications: k,
                failures: failures
                    .iter()
                    .filter(|f| f.n == n && f.beta == beta)
                    .count(),
                coverage_raw: Proportion::new(rs.iter().filter(|r| r.hit_raw).count(), k),
                coverage_corrected: Proportion::new(
                    rs.iter().filter(|r| r.hit_corrected).count(),
                    k,
                ),
                mean_v_hat: mean(rs.iter().map(|r| r.v_hat)),
                mean_v_tilde: mean(rs.iter().map(|r| r.v_tilde)),
                mean_c_hat: mean(rs.iter().map(|r| r.c_hat)),
                mean_sigma_s_hat: mean(rs.iter().map(|r| r.sigma_s_hat)),
                mean_error: mean(rs.iter().map(|r| r.v_hat - v)),
                mean_abs_error: mean(rs.iter().map(|r| (r.v_hat - v).abs())),
                mean_abs_error_corrected: mean(rs.iter().map(|r| (r.v_tilde - v).abs())),
                mean_scaled_error: mean(rs.iter().map(|r| r.scaled_error)),
                mean_abs_scaled_error: mean(rs.iter().map(|r| r.scaled_error.abs())),
            }
        })
        .collect()
}

fn run_vimp_campaign(config: &SimConfig) -> Result<(SimSummary, Vec<VimpRecord>)> {
    config.validate()?;
    let subset = config.subset()?;
    let v = oracle_vi(&config.dgp, config.tau, &subset)?;
    let (ok, failures) = run_tasks(config, |t| vimp_replication(config, &subset, v, t))?;
    let records: Vec<VimpRecord> = ok.into_iter().map(|(_, r)| r).collect();
    let summary = SimSummary {
        campaign: config.campaign,
        tau: config.tau.value(),
        level: config.level,
        oracle_v: Some(v),
        replications_run: records.len() + failures.len(),
        replications_failed: failures.len(),
        cells: summarize_cells(config, &records, &failures, v),
        probes: Vec::new(),
        slopes: Vec::new(),
        failures,
    };
    Ok((summary, records))
}

/// Coverage and error of the importance intervals across the grid.
pub fn run_phase_transition(config: &SimConfig) -> Result<SimResult> {
    let (summary, records) = run_vimp_campaign(config)?;
    Ok(SimResult {
        config: config.clone(),
        records: Records::Vimp(records),
        summary,
    })
}

/// As [`run_phase_transition`], plus a log-log slope of the mean absolute
/// error against `n` for every `beta`.
pub fn run_bias_scaling(config: &SimConfig) -> Result<SimResult> {
    let (mut summary, records) = run_vimp_campaign(config)?;
    summary.slopes = config
        .beta_grid
        .iter()
        .map(|&beta| {
            let cells: Vec<&CellSummary> =
                summary.cells.iter().filter(|c| c.beta == beta).collect();
            let n: Vec<usize> = cells.iter().map(|c| c.n).collect();
            let err: Vec<f64> = cells.iter().map(|c| c.mean_abs_error).collect();
            let xs: Vec<f64> = n.iter().map(|&v| (v as f64).ln()).collect();
            let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
            let fit = log_log_fit(&xs, &ys)?;
            Ok(SlopeFit {
                beta,
                slope: fit.slope,
                std_error: fit.std_error,
                intercept: fit.intercept,
                n,
                mean_abs_error: err,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SimResult {
        config: config.clone(),
        records: Records::Vimp(records),
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Undefined with fewer than three points.
    pub std_error: Option<f64>,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let k = xs.len();
    if k != ys.len() || k < 2 {
        return Err(Error::InvalidInput(
            "regression needs at least two points".into(),
        ));
    }
    if ys.iter().chain(xs).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in regression".into()));
    }
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput(
            "regression needs distinct x values".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = (k > 2).then(|| {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (k - 2) as f64 / sxx).sqrt()
    });
    Ok(LineFit {
        slope,
        intercept,
        std_error,
    })
}

/// Pearson correlation between the sorted sample and Blom normal scores
/// `Phi^-1((i - 3/8) / (m + 1/4))`.
pub fn qq_correlation(sample: &[f64]) -> f64 {
    let m = sample.len();
    if m < 3 {
        return f64::NAN;
    }
    let mut z = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let scores: Vec<f64> = (1..=m)
        .map(|i| normal_quantile((i as f64 - 0.375) / (m as f64 + 0.25)))
        .collect();
    let mz = z.iter().sum::<f64>() / m as f64;
    let ms = scores.iter().sum::<f64>() / m as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in z.iter().zip(&scores) {
        sxy += (a - mz) * (b - ms);
        sxx += (a - mz).powi(2);
        syy += (b - ms).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn probe_replication(config: &SimConfig, truths: &[f64], task: &Task) -> Result<Vec<ProbeRecord>> {
    let data = generate(
        &config.dgp,
        task.n,
        &mut seed::rng_from(seed::derive(task.seed, &[1])),
    )?;
    let model = fit_forest(
        &data,
        &config.forest_config(task.beta, seed::derive(task.seed, &[3])),
    )?;
    let s = model.subsample_size();
    let scale = (task.n as f64 / s as f64).sqrt();
    config
        .probes
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(k, (x, &q_true))| {
            let p = quantile::predict_with_interval(&model, &data, x, config.level)?;
            let sigma_hat = p.sigma2_hat.sqrt();
            let degenerate = p.density_floored || !(sigma_hat > 0.0 && sigma_hat.is_finite());
            Ok(ProbeRecord {
                n: task.n,
                beta: task.beta,
                rep: task.rep,
                seed: task.seed,
                subsample_size: s,
                probe: k,
                q_hat: p.q_hat,
                q_true,
                sigma_hat,
                z: scale * (p.q_hat - q_true) / sigma_hat,
                hit: p.ci_low <= q_true && q_true <= p.ci_high,
                degenerate,
            })
        })
        .collect()
}

/// Standardized errors of the forest quantile at fixed probe points.
pub fn run_pointwise_normality(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let truths: Vec<f64> = config
        .probes
        .iter()
        .map(|x| oracle_quantile(&config.dgp, config.tau, x))
        .collect::<Result<_>>()?;
    let (ok, failures) = run_tasks(config, |t| probe_replication(config, &truths, t))?;
    let records: Vec<ProbeRecord> = ok.into_iter().flat_map(|(_, r)| r).collect();
    let mut probes = Vec::new();
    for (n, beta) in config.cells() {
        for (k, point) in config.probes.iter().enumerate() {
            let rs: Vec<&ProbeRecord> = records
                .iter()
                .filter(|r| r.n == n && r.beta == beta && r.probe == k)
                .collect();
            let used: Vec<&ProbeRecord> = rs.iter().copied().filter(|r| !r.degenerate).collect();
            let z: Vec<f64> = used.iter().map(|r| r.z).collect();
            let mz = mean(z.iter().copied());
            let sd = (z.iter().map(|v| (v - mz).powi(2)).sum::<f64>()
                / (z.len().max(2) - 1) as f64)
                .sqrt();
            probes.push(ProbeSummary {
                n,
                beta,
                probe: k,
                point: point.clone(),
                q_true: truths[k],
                used: used.len(),
                excluded: rs.len() - used.len(),
                qq_correlation: qq_correlation(&z),
                coverage: Proportion::new(used.iter().filter(|r| r.hit).count(), used.len()),
                mean_z: mz,
                sd_z: sd,
                fraction_within_196: z.iter().filter(|v| v.abs() <= 1.96).count() as f64
                    / z.len() as f64,
            });
        }
    }
    let replications_failed = failures.len();
    Ok(SimResult {
        config: config.clone(),
        records: Records::Probe(records),
        summary: SimSummary {
            campaign: config.campaign,
            tau: config.tau.value(),
            level: config.level,
            oracle_v: None,
            replications_run: config.cells().len() * config.replications,
            replications_failed,
            cells: Vec::new(),
            probes,
            slopes: Vec::new(),
            failures,
        },
    })
}

/// Dispatches on the configured campaign.
pub fn run_campaign(config: &SimConfig) -> Result<SimResult> {
    match config.campaign {
        Campaign::PhaseTransition => run_phase_transition(config),
        Campaign::Normality => run_pointwise_normality(config),
        Campaign::BiasScaling => run_bias_scaling(config),
    }
}

//! Exact split of the importance estimation error into an empirical-process
//! term and Knight remainders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pinball::{self, QuantileLevel};

/// `v_hat - V = A_n + R_n`, with `A_n` the centered oracle contributions and
/// `R_n` split per forest into the linear score term and the Knight
/// integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// `mean(v(S; Z_i)) - V` with oracle quantiles.
    pub empirical: f64,
    /// `mean(-d_r psi(u_r) + d_f psi(u_f))` with `d = q_hat - q`.
    pub remainder_linear: f64,
    /// `mean(I(u_r, d_r) - I(u_f, d_f))`.
    pub remainder_integral: f64,
    /// `v_hat - V` computed directly from the losses.
    pub target: f64,
}

impl ErrorDecomposition {
    pub fn total(&self) -> f64 {
        self.empirical + self.remainder_linear + self.remainder_integral
    }

    pub fn residual(&self) -> f64 {
        self.target - self.total()
    }
}

/// Slices hold, per evaluation point, the response, the forest predictions
/// and the oracle quantiles of the full and restricted problems.
pub struct DecompositionInputs<'a> {
    pub y: &'a [f64],
    pub q_hat: &'a [f64],
    pub q_hat_restricted: &'a [f64],
    pub q: &'a [f64],
    pub q_restricted: &'a [f64],
}

pub fn decompose_error(
    inputs: &DecompositionInputs<'_>,
    v: f64,
    tau: QuantileLevel,
) -> Result<ErrorDecomposition> {
    let n = inputs.y.len();
    let lens = [
        inputs.q_hat.len(),
        inputs.q_hat_restricted.len(),
        inputs.q.len(),
        inputs.q_restricted.len(),
    ];
    if n == 0 || lens.iter().any(|&l| l != n) {
        return Err(Error::InvalidInput(
            "decomposition inputs must share a nonempty length".into(),
        ));
    }
    let t = tau.value();
    let (mut v_hat, mut oracle, mut lin, mut int) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let y = inputs.y[i];
        v_hat += pinball::loss(y - inputs.q_hat_restricted[i], t)
            - pinball::loss(y - inputs.q_hat[i], t);
        let (u_f, u_r) = (y - inputs.q[i], y - inputs.q_restricted[i]);
        oracle += pinball::loss(u_r, t) - pinball::loss(u_f, t);
        let (d_f, d_r) = (
            inputs.q_hat[i] - inputs.q[i],
            inputs.q_hat_restricted[i] - inputs.q_restricted[i],
        );
        lin += -d_r * pinball::psi(u_r, t) + d_f * pinball::psi(u_f, t);
        int += pinball::knight_integral(u_r, d_r) - pinball::knight_integral(u_f, d_f);
    }
    let m = n as f64;
    Ok(ErrorDecomposition {
        empirical: oracle / m - v,
        remainder_linear: lin / m,
        remainder_integral: int / m,
        target: v_hat / m - v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ForestConfig, Subsample};
    use crate::seed;
    use crate::simlab::{generate, oracle_quantile, oracle_vi, DgpSpec, RestrictedOracle};
    use crate::vimp::{cross_fitted_vimp, FeatureSubset, VimpOptions};

    #[test]
    fn reproduces_estimation_error_exactly() {
        let spec = DgpSpec::linear_gaussian(vec![1.5, 0.5], 1.0, 2).unwrap();
        let tau = QuantileLevel::new(0.3).unwrap();
        let subset = FeatureSubset::new(vec![0]).unwrap();
        let data = generate(&spec, 400, &mut seed::rng_from(4)).unwrap();
        let cfg = ForestConfig {
            num_trees: 40,
            subsample: Subsample::Rate(0.7),
            min_leaf_est: 2,
            tau,
            ..ForestConfig::default()
        };
        let out = cross_fitted_vimp(
            &data,
            &subset,
            &cfg,
            &VimpOptions {
                split_seed: 2,
                ..VimpOptions::default()
            },
        )
        .unwrap();
        let eval = data.select_rows(&out.split.eval_rows).unwrap();
        let restricted = RestrictedOracle::new(&spec, tau, &subset).unwrap();
        let q: Vec<f64> = (0..eval.n())
            .map(|i| oracle_quantile(&spec, tau, eval.row(i)).unwrap())
            .collect();
        let q_r: Vec<f64> = (0..eval.n())
            .map(|i| restricted.quantile(eval.row(i)))
            .collect();
        let v = oracle_vi(&spec, tau, &subset).unwrap();
        let inputs = DecompositionInputs {
            y: eval.y(),
            q_hat: &out.full.q_hat(),
            q_hat_restricted: &out.restricted.q_hat(),
            q: &q,
            q_restricted: &q_r,
        };
        let d = decompose_error(&inputs, v, tau).unwrap();
        assert!((d.target - (out.report.v_hat - v)).abs() < 1e-12);
        assert!(d.residual().abs() < 1e-12, "{d:?}");
        assert!(d.remainder_integral.is_finite());
    }

    #[test]
    fn rejects_ragged_inputs() {
        let inputs = DecompositionInputs {
            y: &[1.0],
            q_hat: &[],
            q_hat_restricted: &[1.0],
            q: &[1.0],
            q_restricted: &[1.0],
        };
        assert!(decompose_error(&inputs, 0.0, QuantileLevel::new(0.5).unwrap()).is_err());
    }
}

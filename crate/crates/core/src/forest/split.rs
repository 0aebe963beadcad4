use crate::error::{Error, Result};
use crate::pinball::{self, QuantileLevel};

/// Position (1-based) of the left-continuous empirical `tau`-quantile in a
/// sample of size `n`: the smallest `k` with `k / n >= tau`.
pub(crate) fn quantile_rank(n: usize, tau: f64) -> usize {
    let k = (tau * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Left-continuous empirical quantile of an unweighted sample.
pub fn empirical_quantile(values: &[f64], tau: QuantileLevel) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "empirical quantile of an empty sample".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(sorted.len(), tau.value()) - 1])
}

/// Gradient pseudo-outcomes `psi_tau(y_i - q_P)` of a node, centred at the
/// node's own empirical quantile `q_P`.
pub fn pseudo_outcomes(y: &[f64], tau: QuantileLevel) -> Result<Vec<f64>> {
    let q = empirical_quantile(y, tau)?;
    Ok(y.iter()
        .map(|&v| pinball::psi(v - q, tau.value()))
        .collect())
}

/// `Delta(C1, C2) = n1 n2 / n^2 * (mean1 - mean2)^2` for the partition of
/// `pseudo` into `left` and its complement.
pub fn split_gain(pseudo: &[f64], left: &[bool]) -> Result<f64> {
    if pseudo.len() != left.len() {
        return Err(Error::InvalidInput(format!(
            "{} pseudo-outcomes but mask of length {}",
            pseudo.len(),
            left.len()
        )));
    }
    let (mut n_l, mut n_r, mut sum_l, mut sum_r) = (0usize, 0usize, 0.0, 0.0);
    for (&r, &is_left) in pseudo.iter().zip(left) {
        if is_left {
            n_l += 1;
            sum_l += r;
        } else {
            n_r += 1;
            sum_r += r;
        }
    }
    if n_l == 0 || n_r == 0 {
        return Err(Error::InvalidInput("split leaves a child empty".into()));
    }
    let n = (n_l + n_r) as f64;
    let diff = sum_l / n_l as f64 - sum_r / n_r as f64;
    Ok(n_l as f64 * n_r as f64 / (n * n) * diff * diff)
}

/// `Delta` computed from counts of pseudo-outcomes equal to `tau - 1`.
///
/// With `c` such rows among `m`, a child's mean is `tau - c / m`, so the
/// squared difference of means only depends on the counts and comparisons
/// between candidate splits are exact.
#[inline]
pub(crate) fn count_gain(n_l: usize, c_l: usize, n_r: usize, c_r: usize) -> f64 {
    let d = c_r as f64 * n_l as f64 - c_l as f64 * n_r as f64;
    let n = (n_l + n_r) as f64;
    d * d / (n_l as f64 * n_r as f64 * n * n)
}

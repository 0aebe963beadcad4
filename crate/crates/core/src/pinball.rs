//! Pinball (check) loss, its score and the Knight decomposition.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// A quantile level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            Err(Error::InvalidInput(format!(
                "quantile level must lie in the open interval (0, 1), got {tau}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `tau * (1 - tau)`, the Bernoulli variance of the score.
    pub fn score_variance(self) -> f64 {
        self.0 * (1.0 - self.0)
    }

    /// Lipschitz constant of the pinball loss, `max(tau, 1 - tau)`.
    pub fn lipschitz(self) -> f64 {
        self.0.max(1.0 - self.0)
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        QuantileLevel::new(tau)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(tau: QuantileLevel) -> f64 {
        tau.0
    }
}

impl fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn check_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be finite, got {value}"
        )))
    }
}

/// Unchecked pinball loss used on hot paths where inputs are already finite.
#[inline]
pub(crate) fn loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

/// Unchecked score `tau - 1{u <= 0}`.
#[inline]
pub(crate) fn psi(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        tau
    } else {
        tau - 1.0
    }
}

/// `rho_tau(u) = u * (tau - 1{u < 0})`.
pub fn pinball_loss(u: f64, tau: QuantileLevel) -> Result<f64> {
    check_finite("u", u)?;
    Ok(loss(u, tau.0))
}

/// Score of the pinball loss with the left-derivative convention at zero:
/// `psi_tau(u) = tau - 1{u <= 0}`, so `psi_tau(0) = tau - 1`.
///
/// The two-argument form `psi_tau(y, theta)` is `score(y - theta, tau)`.
pub fn score(u: f64, tau: QuantileLevel) -> Result<f64> {
    check_finite("u", u)?;
    Ok(psi(u, tau.0))
}

/// The three pieces of `rho(u - v) - rho(u) = -v psi(u) + int_0^v (1{u<=s} - 1{u<=0}) ds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnightDecomposition {
    pub linear: f64,
    pub integral: f64,
    pub total: f64,
}

impl KnightDecomposition {
    pub fn residual(&self) -> f64 {
        self.total - (self.linear + self.integral)
    }
}

/// Closed form of `int_0^v (1{u <= s} - 1{u <= 0}) ds`.
///
/// The integrand only differs from zero between 0 and `u`, and only when `u`
/// lies on the same side of zero as `v`; the result is never negative.
pub(crate) fn knight_integral(u: f64, v: f64) -> f64 {
    if v >= 0.0 {
        if u > 0.0 {
            (v - u).max(0.0)
        } else {
            0.0
        }
    } else if u <= 0.0 {
        (u - v).max(0.0)
    } else {
        0.0
    }
}

pub fn knight_decompose(u: f64, v: f64, tau: QuantileLevel) -> Result<KnightDecomposition> {
    check_finite("u", u)?;
    check_finite("v", v)?;
    let t = tau.0;
    Ok(KnightDecomposition {
        linear: -v * psi(u, t),
        integral: knight_integral(u, v),
        total: loss(u - v, t) - loss(u, t),
    })
}

/// Expected Knight remainder `E[int_0^v (1{U <= s} - 1{U <= 0}) ds]` for
/// `U = Y - q`, where `Y` has the given density.
///
/// By Fubini this equals `int f(t) |q + v - t| dt` over the interval between
/// `q` and `q + v`, which is integrated adaptively. Only meant as a reference
/// for the quadratic approximation `f(q) v^2 / 2`.
pub fn knight_remainder_oracle<F>(density: F, q: f64, v: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    check_finite("q", q)?;
    check_finite("v", v)?;
    if v == 0.0 {
        return Ok(0.0);
    }
    let end = q + v;
    let (lo, hi) = if v > 0.0 { (q, end) } else { (end, q) };
    let tol = (1e-13 * v * v).max(1e-20);
    numeric::integrate(|t| density(t) * (end - t).abs(), lo, hi, tol)
}

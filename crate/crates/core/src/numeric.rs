//! Small numerical kernels shared by the estimators and the oracles: the
//! standard normal law and adaptive Gauss–Kronrod quadrature.

use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the CDF polishes the last few digits
    let density = normal_pdf(x);
    if density > 0.0 {
        x - (normal_cdf(x) - p) / density
    } else {
        x
    }
}

/// Two-sided critical value `z_{(1+level)/2}`.
pub fn two_sided_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(normal_quantile(0.5 * (1.0 + level)))
}

// Kronrod 15-point abscissae and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Intervals are bisected until every panel's error estimate is below its
/// share of `tol` (absolute) or the panel budget is exhausted, in which case
/// a [`Error::Numerical`] is returned.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical("integration bounds must be finite".into()));
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    const MAX_PANELS: usize = 4096;
    let mut stack = vec![(lo, hi, tol)];
    let mut total = 0.0;
    let mut panels = 0usize;
    while let Some((x0, x1, local_tol)) = stack.pop() {
        let (value, err) = gk15(&mut f, x0, x1);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "integrand not finite on [{x0}, {x1}]"
            )));
        }
        panels += 1;
        if err <= local_tol.max(1e-15 * value.abs()) || (x1 - x0) < 1e-12 * (hi - lo) {
            total += value;
        } else if panels >= MAX_PANELS {
            return Err(Error::Numerical(format!(
                "quadrature did not converge (error estimate {err:e} on [{x0}, {x1}])"
            )));
        } else {
            let mid = 0.5 * (x0 + x1);
            stack.push((mid, x1, 0.5 * local_tol));
            stack.push((x0, mid, 0.5 * local_tol));
        }
    }
    Ok(sign * total)
}

/// Integrates `f` over the unit cube `[0, 1]^dim` by nesting [`integrate`].
pub fn integrate_unit_cube<F>(dim: usize, f: &F, tol: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut point = vec![0.0; dim];
    nested(dim, 0, &mut point, f, tol)
}

fn nested<F>(dim: usize, axis: usize, point: &mut Vec<f64>, f: &F, tol: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if axis == dim {
        return Ok(f(point));
    }
    let mut failure = None;
    let value = integrate(
        |t| {
            point[axis] = t;
            match nested(dim, axis + 1, point, f, tol) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        1.0,
        tol,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Finds the root of a nondecreasing function on `[lo, hi]` by bisection.
pub fn bisect_increasing<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::Numerical(format!(
            "root not bracketed by [{lo}, {hi}]"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

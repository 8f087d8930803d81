//! Median of the Marchenko–Pastur law and the optimal shrinker.

use std::f64::consts::PI;

use crate::error::{Error, Result};

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("aspect ratio must lie in (0, 1], got {beta}")));
    }
    Ok(())
}

/// Support edges `(1 - sqrt(beta))^2` and `(1 + sqrt(beta))^2`.
pub fn mp_edges(beta: f64) -> (f64, f64) {
    let s = beta.sqrt();
    ((1.0 - s).powi(2), (1.0 + s).powi(2))
}

// With x = (1 + beta) - 2 sqrt(beta) cos(theta) the density
// sqrt((l+ - x)(x - l-)) / (2 pi beta x) dx becomes
// 2 sin^2(theta) / (pi (1 + beta - 2 sqrt(beta) cos(theta))) dtheta,
// which is smooth on [0, pi] even for beta = 1.
fn integrand(beta: f64, theta: f64) -> f64 {
    let root = beta.sqrt();
    let half = (0.5 * theta).sin();
    let denom = (1.0 - root).powi(2) + 4.0 * root * half * half;
    if denom == 0.0 {
        // beta = 1, theta = 0: sin^2(theta) / (4 sin^2(theta / 2)) -> 1
        return 2.0 / PI;
    }
    let s = theta.sin();
    2.0 * s * s / (PI * denom)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn cdf_at_angle(beta: f64, theta: f64) -> f64 {
    if theta <= 0.0 {
        return 0.0;
    }
    let f = |t: f64| integrand(beta, t);
    let (fa, fm, fb) = (f(0.0), f(0.5 * theta), f(theta));
    let whole = simpson(0.0, theta, fa, fm, fb);
    adaptive_simpson(&f, 0.0, theta, fa, fm, fb, whole, 1e-14, 40)
}

/// Marchenko–Pastur cumulative distribution `P(X <= x)` for aspect ratio
/// `beta` in `(0, 1]`.
pub fn mp_cdf(beta: f64, x: f64) -> Result<f64> {
    check_beta(beta)?;
    let (lo, hi) = mp_edges(beta);
    if x <= lo {
        return Ok(0.0);
    }
    if x >= hi {
        return Ok(1.0);
    }
    let cos_theta = ((1.0 + beta - x) / (2.0 * beta.sqrt())).clamp(-1.0, 1.0);
    Ok(cdf_at_angle(beta, cos_theta.acos()))
}

/// Median of the Marchenko–Pastur law, found by bisection on the
/// quadrature-evaluated distribution function.
pub fn mp_median(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let (mut lo, mut hi) = (0.0f64, PI);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if cdf_at_angle(beta, mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    Ok(1.0 + beta - 2.0 * beta.sqrt() * theta.cos())
}

/// Frobenius-optimal shrinker for a singular value `y` already normalised
/// by `sigma * sqrt(n)`. Zero at or below the bulk edge `1 + sqrt(beta)`.
pub fn optimal_shrinkage(y: f64, beta: f64) -> f64 {
    if y <= 1.0 + beta.sqrt() {
        return 0.0;
    }
    let t = y * y - beta - 1.0;
    (t * t - 4.0 * beta).max(0.0).sqrt() / y
}

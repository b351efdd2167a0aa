//! Small numeric routines shared across modules: bracketed root finding,
//! adaptive Simpson quadrature, and weighted summary statistics.

use crate::{Error, Result};

/// Bisection on a bracketing interval `[lo, hi]` with `f(lo)` and `f(hi)` of
/// opposite sign. Stops when the interval shrinks below `rel_tol` relative to
/// its midpoint magnitude (with an absolute floor).
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Numeric(format!(
            "bisection bracket does not straddle a root: f({lo}) = {flo}, f({hi}) = {fhi}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= rel_tol * mid.abs().max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric("quadrature limits must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let value = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric("quadrature produced a non-finite value".into()))
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numeric(
            "adaptive quadrature failed to converge at maximum depth".into(),
        ));
    }
    let half = 0.5 * tol;
    Ok(simpson_rec(f, a, m, fa, flm, fm, left, half, depth - 1)?
        + simpson_rec(f, m, b, fm, frm, fb, right, half, depth - 1)?)
}

/// Weighted mean of `values` under nonnegative `weights`. Zero-weight entries
/// are skipped and never read.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&y, &w) in values.iter().zip(weights) {
        if w != 0.0 {
            num += w * y;
            den += w;
        }
    }
    if den <= 0.0 {
        return Err(Error::domain("weighted mean needs positive total weight"));
    }
    Ok(num / den)
}

/// Weighted variance (total-weight divisor) of `values`.
pub fn weighted_variance(values: &[f64], weights: &[f64]) -> Result<f64> {
    let mean = weighted_mean(values, weights)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&y, &w) in values.iter().zip(weights) {
        if w != 0.0 {
            num += w * (y - mean) * (y - mean);
            den += w;
        }
    }
    Ok(num / den)
}

/// Sample mean and variance (divisor `n - 1`) of a plain slice.
pub fn mean_and_sample_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(v, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn simpson_handles_smooth_transcendentals() {
        let v = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 30.0, 1e-10).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert_relative_eq!(r, 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn weighted_mean_skips_zero_weight_entries() {
        let v = weighted_mean(&[1.0, f64::NAN, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(v, 2.0);
    }
}

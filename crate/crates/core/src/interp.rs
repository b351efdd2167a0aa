//! Monotone piecewise-cubic Hermite interpolation with Fritsch-Carlson
//! tangents passed through the Hyman filter, plus exact segment integrals.

use crate::{Error, Result};

/// A monotone nondecreasing cubic Hermite interpolant through knots
/// `(x_i, y_i)` with strictly increasing `x` and nondecreasing `y`.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
    /// cumulative integral of the interpolant up to each knot
    cum_int: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::Construction("need at least two knots".into()));
        }
        if ys.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ys.len(),
            });
        }
        for k in 1..n {
            if !(xs[k] > xs[k - 1]) {
                return Err(Error::Construction(format!(
                    "knot abscissae must be strictly increasing at index {k}"
                )));
            }
            if ys[k] < ys[k - 1] {
                return Err(Error::Construction(format!(
                    "knot ordinates must be nondecreasing at index {k}"
                )));
            }
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Construction("knots must be finite".into()));
        }
        let ds = monotone_tangents(&xs, &ys)?;
        let mut cum_int = vec![0.0; n];
        for k in 1..n {
            cum_int[k] = cum_int[k - 1] + segment_integral(&xs, &ys, &ds, k - 1);
        }
        Ok(MonotoneCubic { xs, ys, ds, cum_int })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    fn segment_of(&self, x: f64) -> usize {
        // rightmost segment whose left knot is <= x
        let k = self.xs.partition_point(|&v| v <= x);
        k.clamp(1, self.xs.len() - 1) - 1
    }

    /// Interpolant value, clamped to the end values outside the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.x_max() {
            return *self.ys.last().unwrap();
        }
        let k = self.segment_of(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        self.ys[k] * h00 + h * self.ds[k] * h10 + self.ys[k + 1] * h01 + h * self.ds[k + 1] * h11
    }

    /// Derivative of the interpolant (zero outside the knot range).
    pub fn derivative(&self, x: f64) -> f64 {
        if x < self.xs[0] || x > self.x_max() {
            return 0.0;
        }
        let k = self.segment_of(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let d00 = (6.0 * t * t - 6.0 * t) / h;
        let d10 = 3.0 * t * t - 4.0 * t + 1.0;
        let d01 = (-6.0 * t * t + 6.0 * t) / h;
        let d11 = 3.0 * t * t - 2.0 * t;
        (self.ys[k] * d00 + self.ys[k + 1] * d01) + self.ds[k] * d10 + self.ds[k + 1] * d11
    }

    /// Exact `\int_{x_0}^{x} f` for `x` within the knot range.
    pub fn integral_to(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= self.x_max() {
            return *self.cum_int.last().unwrap();
        }
        let k = self.segment_of(x);
        self.cum_int[k] + partial_segment_integral(&self.xs, &self.ys, &self.ds, k, x)
    }

    /// Inverse by bisection on a single bracketing segment, to a relative
    /// tolerance of `1e-10`. For a plateau the left edge is returned.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= self.ys[0] {
            return self.xs[0];
        }
        if y >= *self.ys.last().unwrap() {
            return self.x_max();
        }
        let k = self.ys.partition_point(|&v| v < y).max(1) - 1;
        let (mut lo, mut hi) = (self.xs[k], self.xs[(k + 1).min(self.xs.len() - 1)]);
        // the knot interval [k, k+1] brackets y because ys is nondecreasing
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-10 * hi.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

/// Fritsch-Carlson tangents for nondecreasing data, run through the Hyman
/// filter `0 <= d_k <= 3 min(delta_{k-1}, delta_k)`.
fn monotone_tangents(xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    let n = xs.len();
    let m = n - 1;
    let mut h = vec![0.0; m];
    let mut delta = vec![0.0; m];
    for k in 0..m {
        h[k] = xs[k + 1] - xs[k];
        delta[k] = (ys[k + 1] - ys[k]) / h[k];
    }
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return Ok(d);
    }
    // interior: weighted harmonic mean of adjacent secants, zero at a flat
    for k in 1..m {
        if delta[k - 1] <= 0.0 || delta[k] <= 0.0 {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = endpoint_tangent(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = endpoint_tangent(h[m - 1], h[m - 2], delta[m - 1], delta[m - 2]);

    // Hyman clamp
    for k in 0..n {
        let lim = match k {
            0 => 3.0 * delta[0],
            k if k == n - 1 => 3.0 * delta[m - 1],
            k => 3.0 * delta[k - 1].min(delta[k]),
        };
        d[k] = d[k].clamp(0.0, lim.max(0.0));
        if !d[k].is_finite() {
            return Err(Error::Construction("monotonicity filter produced a non-finite tangent".into()));
        }
    }
    Ok(d)
}

fn endpoint_tangent(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let t = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if t.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && t.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        t
    }
}

fn segment_integral(xs: &[f64], ys: &[f64], ds: &[f64], k: usize) -> f64 {
    let h = xs[k + 1] - xs[k];
    // integrals of the Hermite basis over [0, 1]: 1/2, 1/12, 1/2, -1/12
    h * (0.5 * ys[k] + h * ds[k] / 12.0 + 0.5 * ys[k + 1] - h * ds[k + 1] / 12.0)
}

fn partial_segment_integral(xs: &[f64], ys: &[f64], ds: &[f64], k: usize, x: f64) -> f64 {
    let h = xs[k + 1] - xs[k];
    let t = (x - xs[k]) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t2 * t2;
    // antiderivatives of the basis polynomials at t
    let i00 = 0.5 * t4 - t3 + t;
    let i10 = 0.25 * t4 - (2.0 / 3.0) * t3 + 0.5 * t2;
    let i01 = -0.5 * t4 + t3;
    let i11 = 0.25 * t4 - t3 / 3.0;
    h * (ys[k] * i00 + h * ds[k] * i10 + ys[k + 1] * i01 + h * ds[k + 1] * i11)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_knots_give_the_linear_interpolant() {
        let c = 4.0;
        let f = MonotoneCubic::new(vec![0.0, c], vec![0.0, 1.0]).unwrap();
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            assert_relative_eq!(f.eval(t * c), t, epsilon = 1e-12);
        }
        // uniform(0, c): mean of the distribution is c - int F = c/2
        assert_relative_eq!(c - f.integral_to(c), c / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn interpolates_every_knot_exactly() {
        let xs = vec![0.0, 1.0, 2.5, 3.0, 7.0];
        let ys = vec![0.0, 0.1, 0.5, 0.55, 1.0];
        let f = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_relative_eq!(f.eval(*x), *y, epsilon = 1e-14);
        }
    }

    #[test]
    fn stays_monotone_on_a_fine_grid() {
        let xs = vec![0.0, 0.1, 0.2, 1.0, 1.1, 4.0, 10.0];
        let ys = vec![0.0, 0.4, 0.45, 0.46, 0.8, 0.99, 1.0];
        let f = MonotoneCubic::new(xs, ys).unwrap();
        let mut prev = f64::MIN;
        for k in 0..=10_000 {
            let x = 10.0 * k as f64 / 10_000.0;
            let v = f.eval(x);
            assert!(v >= prev - 1e-13, "not monotone at x = {x}");
            prev = v;
        }
    }

    #[test]
    fn integral_matches_trapezoid_quadrature() {
        let xs = vec![0.0, 1.0, 3.0, 4.0];
        let ys = vec![0.0, 0.2, 0.9, 1.0];
        let f = MonotoneCubic::new(xs, ys).unwrap();
        let grid = 200_000;
        let mut acc = 0.0;
        for k in 0..grid {
            let a = 4.0 * k as f64 / grid as f64;
            let b = 4.0 * (k + 1) as f64 / grid as f64;
            acc += 0.5 * (f.eval(a) + f.eval(b)) * (b - a);
        }
        assert_relative_eq!(f.integral_to(4.0), acc, max_relative = 1e-9);
    }

    #[test]
    fn inverse_round_trips() {
        let xs = vec![0.0, 1.0, 3.0, 4.0];
        let ys = vec![0.0, 0.2, 0.9, 1.0];
        let f = MonotoneCubic::new(xs, ys).unwrap();
        for k in 1..40 {
            let u = k as f64 / 40.0;
            let x = f.inverse(u);
            assert_relative_eq!(f.eval(x), u, epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(MonotoneCubic::new(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(MonotoneCubic::new(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(MonotoneCubic::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let xs = vec![0.0, 1.0, 3.0, 4.0];
        let ys = vec![0.0, 0.2, 0.9, 1.0];
        let f = MonotoneCubic::new(xs, ys).unwrap();
        for k in 1..40 {
            let x = 0.1 + 3.8 * k as f64 / 41.0;
            let h = 1e-6;
            let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
            assert_relative_eq!(f.derivative(x), fd, epsilon = 1e-5);
        }
    }
}

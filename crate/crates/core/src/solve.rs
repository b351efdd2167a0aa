//! Point estimation: the sort-based weighted quantile, the closed-form
//! weighted Gini index, weighted least squares, and damped Newton iteration
//! for likelihood scores.

use nalgebra::{DMatrix, DVector};

use crate::estfun::{eval_psi_s, EstimatingFunction, GiniContext, Population};
use crate::variance;
use crate::weights::{normalize, WeightVector};
use crate::{Error, Result};

/// Weighted empirical c.d.f. over the nonzero-weight units of a population:
/// a right-continuous step function `F_hat(y) = (1/N) sum_i w_i I(Y_i <= y)`
/// with tied support points pooled. `N` is the population size, so `F_hat`
/// reaches one exactly when the weights have mean one.
#[derive(Debug, Clone)]
pub struct WeightedEcdf {
    ys: Vec<f64>,
    // cumulative pooled weight up to and including ys[k]
    cum_w: Vec<f64>,
    // suffix sums of w * y from ys[k] upward
    tail_wy: Vec<f64>,
    n_pop: usize,
}

impl WeightedEcdf {
    /// Builds the step function from parallel value/weight slices. Zero
    /// weights are skipped without reading the value; `n_pop` is the
    /// population size used in the `1/N` scaling.
    pub fn new(values: &[f64], weights: &[f64], n_pop: usize) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: weights.len(),
            });
        }
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for (&w, i) in weights.iter().zip(0..) {
            if w == 0.0 {
                continue;
            }
            if w < 0.0 {
                return Err(Error::domain("e.c.d.f. weights must be nonnegative"));
            }
            let y = values[i];
            if !y.is_finite() {
                return Err(Error::domain("observed study values must be finite"));
            }
            pairs.push((y, w));
        }
        if pairs.is_empty() {
            return Err(Error::domain("empty effective sample: all weights are zero"));
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let mut ys = Vec::with_capacity(pairs.len());
        let mut pooled = Vec::with_capacity(pairs.len());
        for (y, w) in pairs {
            if ys.last() == Some(&y) {
                *pooled.last_mut().unwrap() += w;
            } else {
                ys.push(y);
                pooled.push(w);
            }
        }
        let mut cum_w = pooled.clone();
        for k in 1..cum_w.len() {
            cum_w[k] += cum_w[k - 1];
        }
        let mut tail_wy = vec![0.0; ys.len()];
        let mut acc = 0.0;
        for k in (0..ys.len()).rev() {
            acc += pooled[k] * ys[k];
            tail_wy[k] = acc;
        }
        Ok(WeightedEcdf {
            ys,
            cum_w,
            tail_wy,
            n_pop,
        })
    }

    /// Convenience constructor over a scalar population.
    pub fn from_population(pop: &Population, weights: &[f64]) -> Result<Self> {
        let n = pop.len();
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        let values: Vec<f64> = (0..n)
            .map(|i| if weights[i] != 0.0 { pop.value(i) } else { 0.0 })
            .collect();
        WeightedEcdf::new(&values, weights, n)
    }

    pub fn population_size(&self) -> usize {
        self.n_pop
    }

    /// Support points with their pooled weights, in increasing order.
    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ys.iter().zip(0..).map(|(&y, k)| {
            let w = if k == 0 { self.cum_w[0] } else { self.cum_w[k] - self.cum_w[k - 1] };
            (y, w)
        })
    }

    /// `F_hat(y)`.
    pub fn eval(&self, y: f64) -> f64 {
        match self.ys.partition_point(|&v| v <= y) {
            0 => 0.0,
            k => self.cum_w[k - 1] / self.n_pop as f64,
        }
    }

    /// `sum_j w_j Y_j` over support points with `Y_j >= y` (unscaled).
    pub fn tail_weighted_value_sum(&self, y: f64) -> f64 {
        match self.ys.partition_point(|&v| v < y) {
            k if k == self.ys.len() => 0.0,
            k => self.tail_wy[k],
        }
    }

    /// Smallest support point with `F_hat(y) >= p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("quantile level p = {p} must lie in (0, 1)")));
        }
        let target = p * self.n_pop as f64;
        for (k, &c) in self.cum_w.iter().enumerate() {
            if c / self.n_pop as f64 >= p || c >= target {
                return Ok(self.ys[k]);
            }
        }
        // Reached only when the weights do not sum to N; take the top point.
        Ok(*self.ys.last().unwrap())
    }
}

/// Outcome of a solve: the estimate, iteration count, convergence flag, and
/// the achieved `||Psi_s(theta_hat)||`.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
}

impl SolveResult {
    fn closed_form(theta: Vec<f64>, residual_norm: f64) -> Self {
        SolveResult {
            theta,
            iterations: 0,
            converged: true,
            residual_norm,
        }
    }
}

/// The `p`-quantile `inf { y : F_hat(y) >= p }` over normalised weights.
pub fn weighted_quantile(pop: &Population, w: &WeightVector, p: f64) -> Result<SolveResult> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile level p = {p} must lie in (0, 1)")));
    }
    let wn = w.normalized_values()?;
    let ecdf = WeightedEcdf::from_population(pop, &wn)?;
    let q = ecdf.quantile(p)?;
    let ef = EstimatingFunction::quantile(p)?;
    let resid = eval_psi_s(&ef, pop, &WeightVector::raw(wn), &[q])?;
    Ok(SolveResult::closed_form(vec![q], resid.value[0].abs()))
}

/// The weighted Gini index
/// `sum_i sum_j w_i w_j |Y_i - Y_j| / (2 N sum_i w_i Y_i)` over normalised
/// weights, computed in `O(N log N)` through the sorted-rank rearrangement.
pub fn gini(pop: &Population, w: &WeightVector) -> Result<SolveResult> {
    let ctx = gini_with_context(pop, w)?;
    let value = ctx.gini_value()?;
    let residual = ctx.residual_at(value);
    Ok(SolveResult::closed_form(vec![value], residual))
}

/// Builds the plug-in context used by both the point estimate and the
/// variance machinery (weights normalised once).
pub fn gini_with_context(pop: &Population, w: &WeightVector) -> Result<GiniContext> {
    GiniContext::new(pop, w)
}

// Condition-number cutoff for the weighted Gram matrix.
const WLS_CONDITION_LIMIT: f64 = 1e12;

/// Weighted least squares: solves `sum_i w_i x_i^T (y_i - x_i theta) = 0`
/// through the normal equations with a symmetric factorization.
pub fn wls(pop: &Population, w: &WeightVector) -> Result<SolveResult> {
    if pop.width() < 2 {
        return Err(Error::domain("regression populations need at least one regressor column"));
    }
    if w.len() != pop.len() {
        return Err(Error::DimensionMismatch {
            expected: pop.len(),
            got: w.len(),
        });
    }
    let d = pop.width() - 1;
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (i, &wi) in w.values().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let obs = pop.obs(i);
        let x = obs.regressors();
        for r in 0..d {
            rhs[r] += wi * x[r] * obs.value();
            for c in r..d {
                gram[(r, c)] += wi * x[r] * x[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            gram[(r, c)] = gram[(c, r)];
        }
    }

    let eig = gram.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(min_ev > 0.0) || max_ev / min_ev > WLS_CONDITION_LIMIT {
        return Err(Error::RankDeficient(format!(
            "weighted Gram matrix is singular or ill-conditioned (eigenvalue range [{min_ev:.3e}, {max_ev:.3e}])"
        )));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Cholesky factorization failed".into()))?;
    let theta = chol.solve(&rhs);

    let ef = EstimatingFunction::linreg(d);
    let resid = eval_psi_s(&ef, pop, w, theta.as_slice())?;
    let norm = resid.value.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(SolveResult {
        theta: theta.as_slice().to_vec(),
        iterations: 0,
        converged: true,
        residual_norm: norm,
    })
}

/// Options for [`newton_solve`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Convergence threshold on `||Psi_s(theta)||`.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings allowed per iteration before accepting the step anyway.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

/// Damped Newton iteration on `Psi_s(theta) = 0`. The Jacobian is the
/// weighted average of per-unit Jacobians at the current iterate.
pub fn newton_solve(
    ef: &EstimatingFunction,
    pop: &Population,
    w: &WeightVector,
    theta0: &[f64],
    opts: NewtonOptions,
) -> Result<SolveResult> {
    if theta0.len() != ef.dim_theta() {
        return Err(Error::DimensionMismatch {
            expected: ef.dim_theta(),
            got: theta0.len(),
        });
    }
    let mut theta = theta0.to_vec();
    let mut psi = DVector::from_vec(eval_psi_s(ef, pop, w, &theta)?.value);
    let mut norm = psi.norm();
    for iter in 1..=opts.max_iter {
        if norm <= opts.tol {
            return Ok(SolveResult {
                theta,
                iterations: iter - 1,
                converged: true,
                residual_norm: norm,
            });
        }
        let jac = variance::jacobian_avg(ef, pop, w, &theta)?;
        let step = jac
            .lu()
            .solve(&psi)
            .ok_or(Error::SingularJacobian)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t - scale * s)
                .collect();
            let cand_psi = DVector::from_vec(eval_psi_s(ef, pop, w, &cand)?.value);
            let cand_norm = cand_psi.norm();
            if cand_norm.is_finite() && cand_norm < norm {
                theta = cand;
                psi = cand_psi;
                norm = cand_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Ok(SolveResult {
                theta,
                iterations: iter,
                converged: norm <= opts.tol,
                residual_norm: norm,
            });
        }
    }
    let converged = norm <= opts.tol;
    Ok(SolveResult {
        theta,
        iterations: opts.max_iter,
        converged,
        residual_norm: norm,
    })
}

/// Weighted mean as the root of `psi(y; theta) = y - theta`.
pub fn weighted_mean_estimate(pop: &Population, w: &WeightVector) -> Result<SolveResult> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &wi) in w.values().iter().enumerate() {
        if wi != 0.0 {
            num += wi * pop.value(i);
            den += wi;
        }
    }
    if den <= 0.0 {
        return Err(Error::domain("weighted mean needs positive total weight"));
    }
    let theta = num / den;
    let resid = eval_psi_s(&EstimatingFunction::mean(), pop, w, &[theta])?;
    Ok(SolveResult::closed_form(vec![theta], resid.value[0].abs()))
}

/// Convenience: solve with the weights rescaled to mean one (the invariance
/// route of the normalised-weights theorem).
pub fn newton_solve_normalized(
    ef: &EstimatingFunction,
    pop: &Population,
    w: &WeightVector,
    theta0: &[f64],
    opts: NewtonOptions,
) -> Result<SolveResult> {
    let wn = normalize(w)?;
    newton_solve(ef, pop, &wn, theta0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estfun::psi_mle_with_jacobian;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn quantile_examples() {
        let pop = Population::scalar(vec![1.0, 2.0, 3.0]);
        let r = weighted_quantile(&pop, &WeightVector::unit(3), 0.5).unwrap();
        assert_eq!(r.theta[0], 2.0);

        let pop = Population::scalar(vec![5.0]);
        for p in [0.01, 0.5, 0.99] {
            assert_eq!(weighted_quantile(&pop, &WeightVector::unit(1), p).unwrap().theta[0], 5.0);
        }

        let pop = Population::scalar(vec![1.0, 2.0, 3.0, 4.0]);
        let w = WeightVector::raw(vec![2.0, 1.0, 0.0, 1.0]);
        assert_eq!(weighted_quantile(&pop, &w, 0.5).unwrap().theta[0], 1.0);
    }

    #[test]
    fn quantile_rejects_empty_sample_and_bad_p() {
        let pop = Population::scalar(vec![1.0, 2.0]);
        assert!(weighted_quantile(&pop, &WeightVector::raw(vec![0.0, 0.0]), 0.5).is_err());
        assert!(weighted_quantile(&pop, &WeightVector::unit(2), 1.0).is_err());
    }

    #[test]
    fn quantile_matches_order_statistic_under_unit_weights() {
        // distinct values, w = 1: the p-quantile is Y_(ceil(p n)).
        let values = vec![0.4, -1.0, 2.2, 7.7, 3.1, -0.2, 9.9];
        let n = values.len();
        let pop = Population::scalar(values.clone());
        let mut sorted = values;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for p in [0.1, 0.25, 0.5, 0.77, 0.9] {
            let want = sorted[((p * n as f64).ceil() as usize).max(1) - 1];
            let got = weighted_quantile(&pop, &WeightVector::unit(n), p).unwrap().theta[0];
            assert_eq!(got, want, "p = {p}");
        }
    }

    #[test]
    fn gini_examples() {
        let pop = Population::scalar(vec![4.2, 4.2, 4.2]);
        assert_relative_eq!(gini(&pop, &WeightVector::unit(3)).unwrap().theta[0], 0.0);

        let pop = Population::scalar(vec![0.0, 1.0]);
        assert_relative_eq!(
            gini(&pop, &WeightVector::unit(2)).unwrap().theta[0],
            0.5,
            epsilon = 1e-15
        );

        let pop = Population::scalar(vec![1.0, 2.0, 3.0]);
        assert_relative_eq!(
            gini(&pop, &WeightVector::unit(3)).unwrap().theta[0],
            2.0 / 9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gini_matches_naive_double_sum() {
        let mut state = 0x2545f49u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..20 {
            let n = 3 + trial % 7;
            let values: Vec<f64> = (0..n).map(|_| 1.0 + 10.0 * next()).collect();
            let weights: Vec<f64> = (0..n).map(|_| 0.25 + 2.0 * next()).collect();
            let pop = Population::scalar(values.clone());
            let w = WeightVector::raw(weights.clone());
            let fast = gini(&pop, &w).unwrap().theta[0];

            let mean_w = weights.iter().sum::<f64>() / n as f64;
            let wn: Vec<f64> = weights.iter().map(|x| x / mean_w).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                den += wn[i] * values[i];
                for j in 0..n {
                    num += wn[i] * wn[j] * (values[i] - values[j]).abs();
                }
            }
            let naive = num / (2.0 * n as f64 * den);
            assert_relative_eq!(fast, naive, max_relative = 1e-12);
        }
    }

    #[test]
    fn gini_invariance_properties() {
        let pop = Population::scalar(vec![1.0, 5.0, 2.5, 9.0]);
        let w = WeightVector::raw(vec![1.0, 2.0, 0.5, 1.5]);
        let base = gini(&pop, &w).unwrap().theta[0];
        // scaling Y by c > 0 leaves the index unchanged
        let scaled = Population::scalar(vec![3.0, 15.0, 7.5, 27.0]);
        assert_relative_eq!(gini(&scaled, &w).unwrap().theta[0], base, max_relative = 1e-12);
        // scaling w by c > 0 leaves the index unchanged
        let w10 = WeightVector::raw(vec![10.0, 20.0, 5.0, 15.0]);
        assert_relative_eq!(gini(&pop, &w10).unwrap().theta[0], base, max_relative = 1e-12);
        assert!(base >= 0.0 && base < 1.0);
    }

    #[test]
    fn gini_rejects_nonpositive_total() {
        let pop = Population::scalar(vec![0.0, 0.0]);
        assert!(gini(&pop, &WeightVector::unit(2)).is_err());
        let pop = Population::scalar(vec![-1.0, -3.0]);
        assert!(gini(&pop, &WeightVector::unit(2)).is_err());
    }

    #[test]
    fn wls_examples() {
        // y = 2x exactly
        let pop = Population::matrix(vec![2.0, 1.0, 4.0, 2.0, 6.0, 3.0], 2);
        let r = wls(&pop, &WeightVector::unit(3)).unwrap();
        assert_relative_eq!(r.theta[0], 2.0, epsilon = 1e-12);
        assert!(r.residual_norm <= 1e-10 * 4.0);

        // hand normal-equation solve: theta = 11/14
        let pop = Population::matrix(vec![1.0, 1.0, 2.0, 2.0, 2.0, 3.0], 2);
        let r = wls(&pop, &WeightVector::unit(3)).unwrap();
        assert_relative_eq!(r.theta[0], 11.0 / 14.0, epsilon = 1e-12);

        // scaling all weights leaves the estimate unchanged
        let w10 = WeightVector::raw(vec![10.0; 3]);
        let r10 = wls(&pop, &w10).unwrap();
        assert_relative_eq!(r10.theta[0], r.theta[0], epsilon = 1e-12);
    }

    #[test]
    fn wls_rejects_singular_gram() {
        // duplicated column
        let pop = Population::matrix(vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0], 3);
        match wls(&pop, &WeightVector::unit(2)) {
            Err(Error::RankDeficient(_)) => {}
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    fn bernoulli_ef() -> EstimatingFunction {
        psi_mle_with_jacobian(
            1,
            |y, t| vec![y[0] / t[0] - (1.0 - y[0]) / (1.0 - t[0])],
            |y, t| dmatrix![-y[0] / (t[0] * t[0]) - (1.0 - y[0]) / ((1.0 - t[0]) * (1.0 - t[0]))],
        )
    }

    #[test]
    fn newton_examples() {
        let pop = Population::scalar(vec![1.0, 1.0, 0.0]);
        let r = newton_solve(
            &bernoulli_ef(),
            &pop,
            &WeightVector::unit(3),
            &[0.5],
            NewtonOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.theta[0], 2.0 / 3.0, epsilon = 1e-9);

        let pop = Population::scalar(vec![1.0, 3.0]);
        let normal = crate::estfun::psi_mle_with_jacobian(
            1,
            |y, t| vec![y[0] - t[0]],
            |_, _| dmatrix![-1.0],
        );
        let r = newton_solve(&normal, &pop, &WeightVector::unit(2), &[0.0], NewtonOptions::default()).unwrap();
        assert_relative_eq!(r.theta[0], 2.0, epsilon = 1e-12);

        let pop = Population::scalar(vec![1.0, 1.0, 0.0]);
        let w = WeightVector::raw(vec![2.0, 0.0, 1.0]);
        let r = newton_solve(&bernoulli_ef(), &pop, &w, &[0.5], NewtonOptions::default()).unwrap();
        assert_relative_eq!(r.theta[0], 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn newton_reports_nonconvergence_at_iteration_cap() {
        let pop = Population::scalar(vec![1.0, 0.0, 1.0, 1.0]);
        let opts = NewtonOptions {
            max_iter: 1,
            ..Default::default()
        };
        let far = newton_solve(&bernoulli_ef(), &pop, &WeightVector::unit(4), &[0.01], opts).unwrap();
        assert!(!far.converged);
        assert!(far.theta[0].is_finite());
    }

    #[test]
    fn normalization_does_not_move_roots() {
        let pop = Population::scalar(vec![1.0, 1.0, 0.0, 1.0]);
        let w = WeightVector::with_parts(vec![3.0, 1.0, 2.0, 0.5], crate::weights::WeightScheme::Ht, true);
        let a = newton_solve(&bernoulli_ef(), &pop, &w, &[0.5], NewtonOptions::default()).unwrap();
        let b = newton_solve_normalized(&bernoulli_ef(), &pop, &w, &[0.5], NewtonOptions::default()).unwrap();
        assert_relative_eq!(a.theta[0], b.theta[0], epsilon = 1e-9);
    }

    #[test]
    fn solvers_skip_zero_weight_units() {
        // NaN tripwires on excluded units must not leak into any estimate.
        let pop = Population::scalar(vec![1.0, f64::NAN, 3.0]);
        let w = WeightVector::raw(vec![1.0, 0.0, 1.0]);
        assert!(weighted_quantile(&pop, &w, 0.5).unwrap().theta[0].is_finite());
        assert!(gini(&pop, &w).unwrap().theta[0].is_finite());
        assert!(weighted_mean_estimate(&pop, &w).unwrap().theta[0].is_finite());
        let reg = Population::matrix(vec![2.0, 1.0, f64::NAN, f64::NAN, 6.0, 3.0], 2);
        assert!(wls(&reg, &w).unwrap().theta[0].is_finite());
    }
}

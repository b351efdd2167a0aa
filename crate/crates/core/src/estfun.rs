//! Estimating functions `psi(y; theta)` for the supported statistics and the
//! weighted sample estimating equation `Psi_s(theta) = (1/N) sum_i w_i psi(Y_i; theta)`.
//!
//! A unit with zero weight is treated as unobserved: its study values are
//! never read, so populations may carry placeholder values (even NaN) for
//! units outside the sample.

use std::fmt;
use std::sync::Arc;

use crate::solve::WeightedEcdf;
use crate::weights::WeightVector;
use crate::{Error, Result};

/// A finite population stored column-compactly: `width` study values per
/// unit, a stratum label, and the big-data membership flag `delta`.
#[derive(Debug, Clone)]
pub struct Population {
    data: Vec<f64>,
    width: usize,
    stratum: Vec<u32>,
    delta: Vec<bool>,
}

/// Borrowed view of one unit.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: &'a [f64],
    pub stratum: u32,
    pub delta: bool,
}

impl<'a> Observation<'a> {
    /// First study value; the regressand for regression populations.
    pub fn value(&self) -> f64 {
        self.y[0]
    }

    /// Regressor row `y[1..]`.
    pub fn regressors(&self) -> &'a [f64] {
        &self.y[1..]
    }
}

impl Population {
    /// Scalar population with trivial stratum labels and no big-data units.
    pub fn scalar(values: Vec<f64>) -> Self {
        let n = values.len();
        Population {
            data: values,
            width: 1,
            stratum: vec![0; n],
            delta: vec![false; n],
        }
    }

    /// Row-major population with `width` values per unit.
    pub fn matrix(data: Vec<f64>, width: usize) -> Self {
        assert!(width >= 1, "population width must be at least 1");
        assert_eq!(data.len() % width, 0, "data length must be a multiple of width");
        let n = data.len() / width;
        Population {
            data,
            width,
            stratum: vec![0; n],
            delta: vec![false; n],
        }
    }

    pub fn with_strata(mut self, stratum: Vec<u32>) -> Self {
        assert_eq!(stratum.len(), self.len());
        self.stratum = stratum;
        self
    }

    pub fn with_delta(mut self, delta: Vec<bool>) -> Self {
        assert_eq!(delta.len(), self.len());
        self.delta = delta;
        self
    }

    pub fn set_delta(&mut self, delta: Vec<bool>) {
        assert_eq!(delta.len(), self.len());
        self.delta = delta;
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn obs(&self, i: usize) -> Observation<'_> {
        Observation {
            y: &self.data[i * self.width..(i + 1) * self.width],
            stratum: self.stratum[i],
            delta: self.delta[i],
        }
    }

    /// First study value of unit `i`.
    pub fn value(&self, i: usize) -> f64 {
        self.data[i * self.width]
    }

    pub fn stratum(&self, i: usize) -> u32 {
        self.stratum[i]
    }

    pub fn strata(&self) -> &[u32] {
        &self.stratum
    }

    pub fn delta(&self, i: usize) -> bool {
        self.delta[i]
    }

    pub fn deltas(&self) -> &[bool] {
        &self.delta
    }

    /// All first-column values. For scalar populations this is the full data.
    pub fn values(&self) -> Vec<f64> {
        if self.width == 1 {
            self.data.clone()
        } else {
            (0..self.len()).map(|i| self.value(i)).collect()
        }
    }
}

/// How the Jacobian of `Psi` at the estimate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianStrategy {
    /// Weighted average of the analytic per-unit Jacobian.
    AnalyticAverage,
    /// Kernel density estimate at the estimate; the quantile case.
    DensityBased,
    /// User-supplied or finite-difference Jacobian.
    Custom,
}

/// How the estimating equation is solved for `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    ClosedForm,
    SortBased,
    Newton,
}

type ScoreFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;
type ScoreJacFn = dyn Fn(&[f64], &[f64]) -> nalgebra::DMatrix<f64> + Send + Sync;

/// Precomputed sample context for the plug-in Gini estimating function, in
/// which the unknown distribution function is replaced by the weighted
/// empirical c.d.f. of the sample and its integrals by weighted sums.
#[derive(Debug, Clone)]
pub struct GiniContext {
    ecdf: WeightedEcdf,
    moment_xf: f64,
    moment_x: f64,
}

impl GiniContext {
    /// Builds the context from the estimation sample. Weights are normalised
    /// to mean one internally; zero-weight units are never read.
    pub fn new(pop: &Population, w: &WeightVector) -> Result<Self> {
        let ecdf = WeightedEcdf::from_population(pop, w.normalized_values()?.as_slice())?;
        let n = ecdf.population_size() as f64;
        let mut moment_xf = 0.0;
        let mut moment_x = 0.0;
        for (y, wsum) in ecdf.support() {
            moment_xf += wsum * ecdf.eval(y) * y / n;
            moment_x += wsum * y / n;
        }
        Ok(GiniContext {
            ecdf,
            moment_xf,
            moment_x,
        })
    }

    pub fn ecdf(&self) -> &WeightedEcdf {
        &self.ecdf
    }

    /// `(1/N) sum_j w_j F_hat(Y_j) Y_j`
    pub fn moment_xf(&self) -> f64 {
        self.moment_xf
    }

    /// `(1/N) sum_j w_j Y_j`
    pub fn moment_x(&self) -> f64 {
        self.moment_x
    }

    /// Plug-in estimating function value at `(y, theta)`.
    pub fn psi_hat(&self, y: f64, theta: f64) -> f64 {
        psi_gini_hat(y, theta, &self.ecdf, self.moment_xf)
    }

    /// The weighted Gini index of the sample the context was built from,
    /// computed through the sorted-rank rearrangement of the double sum.
    pub fn gini_value(&self) -> Result<f64> {
        let n = self.ecdf.population_size() as f64;
        if self.moment_x <= 0.0 {
            return Err(Error::domain(
                "Gini index requires a positive weighted total of the study values",
            ));
        }
        // sum_{i,j} w_i w_j |Y_i - Y_j| = 2 sum_j w_j (Y_j W_{<j} - S_{<j})
        let mut cum_w = 0.0;
        let mut cum_wy = 0.0;
        let mut num = 0.0;
        for (y, wsum) in self.ecdf.support() {
            num += 2.0 * wsum * (y * cum_w - cum_wy);
            cum_w += wsum;
            cum_wy += wsum * y;
        }
        Ok(num / (2.0 * n * cum_wy))
    }

    /// `|Psi_s(theta)|` for the plug-in psi at a given `theta`; the root of
    /// the averaged plug-in equation is `2 * moment_xf / moment_x - 1`, which
    /// differs from the Gini double-sum value by the diagonal atom term.
    pub fn residual_at(&self, theta: f64) -> f64 {
        (2.0 * self.moment_xf - self.moment_x - theta * self.moment_x).abs()
    }
}

enum PsiKind {
    Mean,
    Quantile { p: f64 },
    GiniHat { ctx: GiniContext },
    LinReg { dim: usize },
    Score { dim: usize, score: Arc<ScoreFn>, jac: Option<Arc<ScoreJacFn>> },
}

impl fmt::Debug for PsiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiKind::Mean => write!(f, "Mean"),
            PsiKind::Quantile { p } => write!(f, "Quantile(p={p})"),
            PsiKind::GiniHat { .. } => write!(f, "GiniHat"),
            PsiKind::LinReg { dim } => write!(f, "LinReg(dim={dim})"),
            PsiKind::Score { dim, .. } => write!(f, "Score(dim={dim})"),
        }
    }
}

/// A statistic's estimating function: its dimension, the map
/// `(y, theta) -> psi`, and the Jacobian and solve strategies that apply.
#[derive(Debug)]
pub struct EstimatingFunction {
    kind: PsiKind,
}

impl EstimatingFunction {
    /// `psi(y; theta) = y - theta`.
    pub fn mean() -> Self {
        EstimatingFunction { kind: PsiKind::Mean }
    }

    /// `psi(y; theta) = (1-p) I(y < theta) - p I(y > theta)`.
    pub fn quantile(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("quantile level p = {p} must lie in (0, 1)")));
        }
        Ok(EstimatingFunction {
            kind: PsiKind::Quantile { p },
        })
    }

    /// Plug-in Gini estimating function bound to a sample context.
    pub fn gini_hat(ctx: GiniContext) -> Self {
        EstimatingFunction {
            kind: PsiKind::GiniHat { ctx },
        }
    }

    /// `psi(y, x; theta) = x^T (y - x theta)` with `dim` regressors.
    pub fn linreg(dim: usize) -> Self {
        assert!(dim >= 1);
        EstimatingFunction {
            kind: PsiKind::LinReg { dim },
        }
    }

    pub fn gini_context(&self) -> Option<&GiniContext> {
        match &self.kind {
            PsiKind::GiniHat { ctx } => Some(ctx),
            _ => None,
        }
    }

    pub fn quantile_level(&self) -> Option<f64> {
        match &self.kind {
            PsiKind::Quantile { p } => Some(*p),
            _ => None,
        }
    }

    pub fn dim_theta(&self) -> usize {
        match &self.kind {
            PsiKind::Mean | PsiKind::Quantile { .. } | PsiKind::GiniHat { .. } => 1,
            PsiKind::LinReg { dim } => *dim,
            PsiKind::Score { dim, .. } => *dim,
        }
    }

    pub fn jacobian_strategy(&self) -> JacobianStrategy {
        match &self.kind {
            PsiKind::Quantile { .. } => JacobianStrategy::DensityBased,
            PsiKind::Score { jac: None, .. } => JacobianStrategy::Custom,
            _ => JacobianStrategy::AnalyticAverage,
        }
    }

    pub fn solve_strategy(&self) -> SolveStrategy {
        match &self.kind {
            PsiKind::Mean | PsiKind::GiniHat { .. } | PsiKind::LinReg { .. } => SolveStrategy::ClosedForm,
            PsiKind::Quantile { .. } => SolveStrategy::SortBased,
            PsiKind::Score { .. } => SolveStrategy::Newton,
        }
    }

    /// Evaluates `psi(y; theta)` into `out` (`out.len() == dim_theta`).
    pub fn psi_into(&self, y: &[f64], theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.dim_theta());
        debug_assert_eq!(out.len(), self.dim_theta());
        match &self.kind {
            PsiKind::Mean => out[0] = psi_mean(y[0], theta[0]),
            PsiKind::Quantile { p } => {
                out[0] = psi_quantile(y[0], theta[0], *p).expect("p validated at construction")
            }
            PsiKind::GiniHat { ctx } => out[0] = ctx.psi_hat(y[0], theta[0]),
            PsiKind::LinReg { .. } => {
                let v = psi_linreg(y[0], &y[1..], theta).expect("dimensions validated by caller");
                out.copy_from_slice(&v);
            }
            PsiKind::Score { score, .. } => {
                let v = score(y, theta);
                out.copy_from_slice(&v);
            }
        }
    }

    pub fn psi(&self, y: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_theta()];
        self.psi_into(y, theta, &mut out);
        out
    }

    /// Analytic per-unit Jacobian where one exists. `None` for quantiles and
    /// scores without a supplied Jacobian.
    pub(crate) fn psi_jacobian(&self, y: &[f64], theta: &[f64]) -> Option<nalgebra::DMatrix<f64>> {
        match &self.kind {
            PsiKind::Mean => Some(nalgebra::DMatrix::from_element(1, 1, -1.0)),
            PsiKind::GiniHat { .. } => Some(nalgebra::DMatrix::from_element(1, 1, -y[0])),
            PsiKind::LinReg { dim } => {
                let x = &y[1..];
                let mut m = nalgebra::DMatrix::zeros(*dim, *dim);
                for r in 0..*dim {
                    for c in 0..*dim {
                        m[(r, c)] = -x[r] * x[c];
                    }
                }
                Some(m)
            }
            PsiKind::Score { jac: Some(j), .. } => Some(j(y, theta)),
            PsiKind::Quantile { .. } | PsiKind::Score { jac: None, .. } => None,
        }
    }
}

/// Wraps a likelihood score as an estimating function solved by Newton
/// iteration, with the Jacobian averaged per unit via central differences.
pub fn psi_mle<F>(dim: usize, score: F) -> EstimatingFunction
where
    F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
{
    EstimatingFunction {
        kind: PsiKind::Score {
            dim,
            score: Arc::new(score),
            jac: None,
        },
    }
}

/// Like [`psi_mle`] but with an analytic per-unit score Jacobian.
pub fn psi_mle_with_jacobian<F, J>(dim: usize, score: F, jac: J) -> EstimatingFunction
where
    F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    J: Fn(&[f64], &[f64]) -> nalgebra::DMatrix<f64> + Send + Sync + 'static,
{
    EstimatingFunction {
        kind: PsiKind::Score {
            dim,
            score: Arc::new(score),
            jac: Some(Arc::new(jac)),
        },
    }
}

/// `psi` for the mean: `y - theta`.
pub fn psi_mean(y: f64, theta: f64) -> f64 {
    y - theta
}

/// `psi` for the `p`-quantile: `(1-p) I(y < theta) - p I(y > theta)`;
/// zero on the tie `y = theta`.
pub fn psi_quantile(y: f64, theta: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile level p = {p} must lie in (0, 1)")));
    }
    Ok(if y < theta {
        1.0 - p
    } else if y > theta {
        -p
    } else {
        0.0
    })
}

/// Plug-in Gini `psi`: every occurrence of the distribution function is
/// replaced by the weighted sample e.c.d.f. and integrals by weighted sums.
/// `moment_xf = (1/N) sum_j w_j F_hat(Y_j) Y_j` must be precomputed on the
/// same sample that built `fhat`.
pub fn psi_gini_hat(y: f64, theta: f64, fhat: &WeightedEcdf, moment_xf: f64) -> f64 {
    let n = fhat.population_size() as f64;
    let upper = fhat.tail_weighted_value_sum(y) / n;
    2.0 * (upper - moment_xf) + (2.0 * fhat.eval(y) - 1.0) * y - theta * y
}

/// `psi` for linear regression: `x^T (y - x theta)`.
pub fn psi_linreg(y: f64, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    if x.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: x.len(),
        });
    }
    let resid = y - x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
    Ok(x.iter().map(|xi| xi * resid).collect())
}

/// Value of the sample estimating equation together with the number of
/// contributing (nonzero-weight) terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatingEquationValue {
    pub value: Vec<f64>,
    pub n_terms: usize,
}

/// Evaluates `Psi_s(theta) = (1/N) sum_i w_i psi(Y_i; theta)`.
///
/// Units with `w_i == 0` are skipped before their study values are touched.
pub fn eval_psi_s(
    ef: &EstimatingFunction,
    pop: &Population,
    w: &WeightVector,
    theta: &[f64],
) -> Result<EstimatingEquationValue> {
    if w.len() != pop.len() {
        return Err(Error::DimensionMismatch {
            expected: pop.len(),
            got: w.len(),
        });
    }
    if theta.len() != ef.dim_theta() {
        return Err(Error::DimensionMismatch {
            expected: ef.dim_theta(),
            got: theta.len(),
        });
    }
    let d = ef.dim_theta();
    let n = pop.len() as f64;
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut n_terms = 0;
    for (i, &wi) in w.values().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        n_terms += 1;
        ef.psi_into(pop.obs(i).y, theta, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += wi * b;
        }
    }
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(EstimatingEquationValue {
        value: acc,
        n_terms,
    })
}

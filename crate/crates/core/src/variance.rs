//! Variance estimation for weighted estimating-equation estimators.
//!
//! `V'` estimates the design variance of `sqrt(N) Psi_s(theta_0)` given the
//! realized population; `V` estimates the superpopulation variance of
//! `sqrt(N) Psi_N(theta_0)` under i.i.d. sampling. Sandwiching either (or
//! their sum) between inverse Jacobian factors yields the design and joint
//! variance of the estimator itself.

use nalgebra::{DMatrix, DVector};

use crate::estfun::{EstimatingFunction, JacobianStrategy, Population};
use crate::solve::WeightedEcdf;
use crate::weights::{MembershipRealization, WeightVector};
use crate::{Error, Result};

/// Assembled variance estimates for one fit.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    /// Design variance estimate of `sqrt(N) Psi_s(theta_0)`.
    pub v_prime: DMatrix<f64>,
    /// Superpopulation variance estimate of `sqrt(N) Psi_N(theta_0)`, when an
    /// i.i.d. superpopulation was declared.
    pub v_super: Option<DMatrix<f64>>,
    /// Jacobian estimate of `Psi` at the estimate.
    pub jac: DMatrix<f64>,
    /// `(1/N) jac^{-1} v_prime jac^{-T}`.
    pub design_var: DMatrix<f64>,
    /// `(1/N) jac^{-1} (v_prime + v_super) jac^{-T}` when `v_super` is present.
    pub joint_var: Option<DMatrix<f64>>,
    pub n_pop: usize,
}

/// A weighted Gaussian-kernel density estimate.
pub struct DensityEstimate {
    points: Vec<(f64, f64)>,
    total_weight: f64,
    pub bandwidth: f64,
}

impl DensityEstimate {
    /// `f_hat(y) >= 0` everywhere.
    pub fn eval(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * self.total_weight);
        let mut acc = 0.0;
        for &(yi, wi) in &self.points {
            let z = (y - yi) / h;
            acc += wi * (-0.5 * z * z).exp();
        }
        acc * norm
    }
}

/// Weighted kernel density with the weighted Silverman bandwidth
/// `0.9 min(sd, IQR / 1.34) m^(-1/5)`, where `m = (sum w)^2 / sum w^2` is the
/// effective sample size.
pub fn weighted_kde(pop: &Population, w: &WeightVector) -> Result<DensityEstimate> {
    let mut points = Vec::new();
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    for (i, &wi) in w.values().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        points.push((pop.value(i), wi));
        sw += wi;
        sw2 += wi * wi;
    }
    if points.len() < 2 {
        return Err(Error::domain("density estimation needs at least two observed units"));
    }
    let mean = points.iter().map(|&(y, wi)| wi * y).sum::<f64>() / sw;
    let var = points.iter().map(|&(y, wi)| wi * (y - mean) * (y - mean)).sum::<f64>() / sw;
    let sd = var.sqrt();

    let ecdf = WeightedEcdf::new(
        &points.iter().map(|p| p.0).collect::<Vec<_>>(),
        &points.iter().map(|p| p.1).collect::<Vec<_>>(),
        points.len(),
    )?;
    // quantiles of the observed mass: rescale levels by sw / n so the step
    // function built with population scaling n = points.len() is treated as
    // a proper c.d.f. of the sample
    let scale = points.len() as f64 / sw;
    let q25 = ecdf.quantile(0.25 / scale.max(1e-300)).or_else(|_| ecdf.quantile(0.25))?;
    let q75 = ecdf.quantile((0.75 / scale.max(1e-300)).min(0.999_999)).or_else(|_| ecdf.quantile(0.75))?;
    let iqr = q75 - q25;

    let m = sw * sw / sw2;
    let spread = sd.min(iqr / 1.34);
    let bandwidth = 0.9 * spread * m.powf(-0.2);
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::domain("degenerate sample: zero spread, cannot estimate a density"));
    }
    Ok(DensityEstimate {
        points,
        total_weight: sw,
        bandwidth,
    })
}

/// Jacobian estimate `(1/N) sum_i w_i psi_dot(Y_i; theta_hat)`.
///
/// Rejected for quantiles, whose per-unit derivative is undefined at the
/// estimate; use [`density_jacobian`] there.
pub fn jacobian_avg(
    ef: &EstimatingFunction,
    pop: &Population,
    w: &WeightVector,
    theta_hat: &[f64],
) -> Result<DMatrix<f64>> {
    if ef.jacobian_strategy() == JacobianStrategy::DensityBased {
        return Err(Error::UnsupportedJacobian(
            "per-unit derivatives are undefined for quantiles; use density_jacobian",
        ));
    }
    if w.len() != pop.len() {
        return Err(Error::DimensionMismatch {
            expected: pop.len(),
            got: w.len(),
        });
    }
    let d = ef.dim_theta();
    let n = pop.len() as f64;
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for (i, &wi) in w.values().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let y = pop.obs(i).y;
        let j = match ef.psi_jacobian(y, theta_hat) {
            Some(j) => j,
            None => finite_difference_unit_jacobian(ef, y, theta_hat),
        };
        acc += j * wi;
    }
    Ok(acc / n)
}

fn finite_difference_unit_jacobian(
    ef: &EstimatingFunction,
    y: &[f64],
    theta: &[f64],
) -> DMatrix<f64> {
    let d = ef.dim_theta();
    let mut out = DMatrix::<f64>::zeros(d, d);
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    for c in 0..d {
        let h = 1e-6 * (1.0 + theta[c].abs());
        plus[c] = theta[c] + h;
        minus[c] = theta[c] - h;
        let fp = ef.psi(y, &plus);
        let fm = ef.psi(y, &minus);
        for r in 0..d {
            out[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
        plus[c] = theta[c];
        minus[c] = theta[c];
    }
    out
}

/// Quantile Jacobian: a kernel density estimate evaluated at the estimate,
/// returned as a 1x1 matrix.
pub fn density_jacobian(pop: &Population, w: &WeightVector, theta_hat: f64) -> Result<DMatrix<f64>> {
    let kde = weighted_kde(pop, w)?;
    Ok(DMatrix::from_element(1, 1, kde.eval(theta_hat)))
}

/// Horvitz-Thompson variance estimator of `sqrt(N) Psi_s(theta_0)`:
/// `(1/N) sum_{i,j in A \ B} (pi_i^{-1} pi_j^{-1} - pi_ij^{-1}) psi_i psi_j^T`.
///
/// With `big_set` empty this is the survey-only form; excluding the big-data
/// overlap gives the integrated form, whose design randomness comes only from
/// units observed through the survey.
pub fn vprime_ht(
    ef: &EstimatingFunction,
    pop: &Population,
    m: &MembershipRealization,
    theta_hat: &[f64],
    big_set: Option<&[bool]>,
) -> Result<DMatrix<f64>> {
    if m.len() != pop.len() {
        return Err(Error::DimensionMismatch {
            expected: pop.len(),
            got: m.len(),
        });
    }
    let d = ef.dim_theta();
    let units: Vec<usize> = m
        .sampled()
        .into_iter()
        .filter(|&i| big_set.map_or(true, |b| !b[i]))
        .collect();
    let psis: Vec<DVector<f64>> = units
        .iter()
        .map(|&i| DVector::from_vec(ef.psi(pop.obs(i).y, theta_hat)))
        .collect();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for (a, &i) in units.iter().enumerate() {
        for (b, &j) in units.iter().enumerate() {
            let pij = m.pi2(i, j);
            if !(pij > 0.0) {
                return Err(Error::Design(format!(
                    "second-order inclusion probability for pair ({i}, {j}) is zero or missing"
                )));
            }
            let coef = 1.0 / (m.pi(i) * m.pi(j)) - 1.0 / pij;
            if coef != 0.0 {
                acc += (&psis[a] * psis[b].transpose()) * coef;
            }
        }
    }
    Ok(acc / pop.len() as f64)
}

/// SRSWOR variance of `sqrt(N) Psi_s`: `((1-f)/f) S^2`, where `S^2` is the
/// sample covariance of the psi values over `A \ B` using the divisors
/// `n - 1` and `n` of the full survey sample size `n = |A|`.
pub fn vprime_srswor(sampled_psi: &[DVector<f64>], n: usize, f: f64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::domain(format!("SRSWOR variance needs a sample of at least 2, got {n}")));
    }
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::domain(format!("sampling fraction f = {f} must lie in (0, 1]")));
    }
    let d = sampled_psi.first().map_or(1, |v| v.len());
    let mut sum_outer = DMatrix::<f64>::zeros(d, d);
    let mut sum = DVector::<f64>::zeros(d);
    for psi in sampled_psi {
        sum_outer += psi * psi.transpose();
        sum += psi;
    }
    let s2 = (sum_outer - (&sum * sum.transpose()) / n as f64) / (n as f64 - 1.0);
    Ok(s2 * ((1.0 - f) / f))
}

/// Combines independently sampled strata: `V' = sum_h F_h V'_h` with the
/// subpopulation fractions summing to one.
pub fn vprime_stratified(per_stratum: &[(f64, DMatrix<f64>)]) -> Result<DMatrix<f64>> {
    if per_stratum.is_empty() {
        return Err(Error::domain("stratified variance needs at least one stratum"));
    }
    let total: f64 = per_stratum.iter().map(|(f, _)| f).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "stratum fractions must sum to 1, got {total}"
        )));
    }
    if per_stratum.iter().any(|(f, _)| *f <= 0.0) {
        return Err(Error::domain("stratum fractions must be positive"));
    }
    let d = per_stratum[0].1.nrows();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for (f, v) in per_stratum {
        acc += v * *f;
    }
    Ok(acc)
}

/// One stratum of a realized stratified SRSWOR design, as needed by the
/// variance formulas: its population share, its survey sample, and the
/// within-stratum sampling fraction.
#[derive(Debug, Clone)]
pub struct StratumSample {
    /// `F_h`: stratum frame size over the population size `N`.
    pub population_fraction: f64,
    /// `f_h = n_h / N_h` on the frame actually sampled from.
    pub sampling_fraction: f64,
    /// `n_h = |A_h|`, the full survey sample size in the stratum.
    pub sample_size: usize,
    /// Indices of the sampled units.
    pub units: Vec<usize>,
}

/// Stratified-SRSWOR design description for variance estimation. When the
/// big-data set was excluded from the survey frame, it enters as a completely
/// enumerated stratum: `enumerated_fraction` is its population share and it
/// contributes zero design variance.
#[derive(Debug, Clone)]
pub struct StratifiedSrsworInfo {
    pub strata: Vec<StratumSample>,
    pub enumerated_fraction: f64,
}

impl StratifiedSrsworInfo {
    /// Single-stratum SRSWOR over the whole population.
    pub fn srswor(n_pop: usize, units: Vec<usize>) -> Self {
        let n = units.len();
        StratifiedSrsworInfo {
            strata: vec![StratumSample {
                population_fraction: 1.0,
                sampling_fraction: n as f64 / n_pop as f64,
                sample_size: n,
                units,
            }],
            enumerated_fraction: 0.0,
        }
    }
}

/// Applies the SRSWOR variance within each stratum (dropping big-data units
/// from the sums) and combines the strata by their population fractions.
pub fn vprime_stratified_srswor(
    ef: &EstimatingFunction,
    pop: &Population,
    info: &StratifiedSrsworInfo,
    theta_hat: &[f64],
    big_set: Option<&[bool]>,
) -> Result<DMatrix<f64>> {
    let d = ef.dim_theta();
    let mut parts: Vec<(f64, DMatrix<f64>)> = Vec::with_capacity(info.strata.len() + 1);
    for stratum in &info.strata {
        let psis: Vec<DVector<f64>> = stratum
            .units
            .iter()
            .filter(|&&i| big_set.map_or(true, |b| !b[i]))
            .map(|&i| DVector::from_vec(ef.psi(pop.obs(i).y, theta_hat)))
            .collect();
        let v = vprime_srswor(&psis, stratum.sample_size, stratum.sampling_fraction)?;
        parts.push((stratum.population_fraction, v));
    }
    if info.enumerated_fraction > 0.0 {
        parts.push((info.enumerated_fraction, DMatrix::zeros(d, d)));
    }
    vprime_stratified(&parts)
}

/// Unconditional (superpopulation) variance estimator for
/// `sqrt(N) Psi_N(theta_0)` under i.i.d. observations:
/// `(1/N) sum_i w_i psi_i psi_i^T`.
pub fn v_super_iid(
    ef: &EstimatingFunction,
    pop: &Population,
    w: &WeightVector,
    theta_hat: &[f64],
) -> Result<DMatrix<f64>> {
    if w.len() != pop.len() {
        return Err(Error::DimensionMismatch {
            expected: pop.len(),
            got: w.len(),
        });
    }
    let d = ef.dim_theta();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut buf = vec![0.0; d];
    for (i, &wi) in w.values().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        ef.psi_into(pop.obs(i).y, theta_hat, &mut buf);
        for r in 0..d {
            for c in 0..d {
                acc[(r, c)] += wi * buf[r] * buf[c];
            }
        }
    }
    Ok(acc / pop.len() as f64)
}

/// Assembles the estimator-level variances:
/// `design = (1/N) J^{-1} V' J^{-T}` and, when `v_super` is supplied,
/// `joint = (1/N) J^{-1} (V' + V) J^{-T}`.
pub fn assemble(
    jac: DMatrix<f64>,
    v_prime: DMatrix<f64>,
    v_super: Option<DMatrix<f64>>,
    n_pop: usize,
) -> Result<VarianceReport> {
    let inv = jac
        .clone()
        .try_inverse()
        .ok_or(Error::SingularJacobian)?;
    let n = n_pop as f64;
    let design_var = (&inv * &v_prime * inv.transpose()) / n;
    let joint_var = v_super.as_ref().map(|vs| {
        let total = &v_prime + vs;
        (&inv * total * inv.transpose()) / n
    });
    Ok(VarianceReport {
        v_prime,
        v_super,
        jac,
        design_var,
        joint_var,
        n_pop,
    })
}

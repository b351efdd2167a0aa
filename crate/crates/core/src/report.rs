//! One-shot estimation: point estimate plus design and joint variance for a
//! named statistic, given weights and (optionally) the realized sampling
//! design.

use serde_json::json;

use crate::estfun::{EstimatingFunction, Population};
use crate::solve::{self, SolveResult};
use crate::variance::{self, StratifiedSrsworInfo, VarianceReport};
use crate::weights::{normalize, WeightScheme, WeightVector};
use crate::{Error, Result};

/// The statistics the pipeline knows how to estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    Mean,
    /// `p`-quantile; `Quantile(0.5)` is the median.
    Quantile(f64),
    Gini,
    /// Linear regression of the first column on the remaining columns.
    LinReg,
}

impl Statistic {
    /// Parses `mean`, `median`, `gini`, `linreg`, or `quantile:<p>`.
    pub fn parse(name: &str) -> Result<Statistic> {
        match name {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Quantile(0.5)),
            "gini" => Ok(Statistic::Gini),
            "linreg" => Ok(Statistic::LinReg),
            other => {
                if let Some(p) = other.strip_prefix("quantile:") {
                    let p: f64 = p
                        .parse()
                        .map_err(|_| Error::Validation(format!("bad quantile level in '{other}'")))?;
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::Validation(format!("quantile level {p} must lie in (0, 1)")));
                    }
                    Ok(Statistic::Quantile(p))
                } else {
                    Err(Error::Validation(format!(
                        "unknown statistic '{other}' (expected mean, median, gini, linreg, or quantile:<p>)"
                    )))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Statistic::Mean => "mean".into(),
            Statistic::Quantile(p) if (*p - 0.5).abs() < 1e-12 => "median".into(),
            Statistic::Quantile(p) => format!("quantile:{p}"),
            Statistic::Gini => "gini".into(),
            Statistic::LinReg => "linreg".into(),
        }
    }

    /// Quantiles and the Gini are computed from weights normalised to mean
    /// one; the equation-solved statistics use the weights as given.
    fn wants_normalized_weights(&self) -> bool {
        matches!(self, Statistic::Quantile(_) | Statistic::Gini)
    }
}

/// A point estimate with its provenance and variance estimates.
#[derive(Debug)]
pub struct EstimateReport {
    pub statistic: Statistic,
    pub theta: Vec<f64>,
    pub scheme: WeightScheme,
    pub solve: SolveResult,
    pub variance: Option<VarianceReport>,
    pub n_pop: usize,
}

impl EstimateReport {
    pub fn design_se(&self) -> Option<Vec<f64>> {
        self.variance
            .as_ref()
            .map(|v| (0..v.design_var.nrows()).map(|k| v.design_var[(k, k)].max(0.0).sqrt()).collect())
    }

    pub fn joint_se(&self) -> Option<Vec<f64>> {
        self.variance.as_ref().and_then(|v| {
            v.joint_var
                .as_ref()
                .map(|jv| (0..jv.nrows()).map(|k| jv[(k, k)].max(0.0).sqrt()).collect())
        })
    }

    /// Machine-readable report with full round-trip float precision.
    pub fn to_json(&self) -> serde_json::Value {
        let mat = |m: &nalgebra::DMatrix<f64>| -> serde_json::Value {
            json!((0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect::<Vec<_>>())
                .collect::<Vec<_>>())
        };
        json!({
            "statistic": self.statistic.label(),
            "theta": self.theta,
            "weights": self.scheme.to_string(),
            "n_pop": self.n_pop,
            "solve": {
                "iterations": self.solve.iterations,
                "converged": self.solve.converged,
                "residual_norm": self.solve.residual_norm,
            },
            "design_se": self.design_se(),
            "joint_se": self.joint_se(),
            "variance": self.variance.as_ref().map(|v| json!({
                "v_prime": mat(&v.v_prime),
                "v_super": v.v_super.as_ref().map(&mat),
                "jacobian": mat(&v.jac),
                "design_var": mat(&v.design_var),
                "joint_var": v.joint_var.as_ref().map(&mat),
            })),
        })
    }
}

/// Point estimate only.
pub fn point_estimate(pop: &Population, w: &WeightVector, stat: &Statistic) -> Result<SolveResult> {
    match stat {
        Statistic::Mean => solve::weighted_mean_estimate(pop, w),
        Statistic::Quantile(p) => solve::weighted_quantile(pop, w, *p),
        Statistic::Gini => solve::gini(pop, w),
        Statistic::LinReg => solve::wls(pop, w),
    }
}

/// Point estimate plus variance. `design` carries the realized stratified
/// SRSWOR design when one is available; `iid_superpop` adds the
/// superpopulation term and the joint variance.
pub fn estimate(
    pop: &Population,
    w: &WeightVector,
    stat: &Statistic,
    design: Option<&StratifiedSrsworInfo>,
    iid_superpop: bool,
) -> Result<EstimateReport> {
    let fit = point_estimate(pop, w, stat)?;
    let scheme = w.scheme().clone();
    let n_pop = pop.len();

    let variance = match design {
        None => None,
        Some(info) => Some(variance_for(pop, w, stat, &fit, info, iid_superpop)?),
    };

    Ok(EstimateReport {
        statistic: stat.clone(),
        theta: fit.theta.clone(),
        scheme,
        solve: fit,
        variance,
        n_pop,
    })
}

fn variance_for(
    pop: &Population,
    w: &WeightVector,
    stat: &Statistic,
    fit: &SolveResult,
    info: &StratifiedSrsworInfo,
    iid_superpop: bool,
) -> Result<VarianceReport> {
    // the psi used in the variance sums is evaluated with the same weights
    // used for the point estimate
    let w_eval = if stat.wants_normalized_weights() {
        normalize(w)?
    } else {
        w.clone()
    };
    let ef = build_ef(pop, &w_eval, stat)?;
    let theta = &fit.theta;

    let jac = match stat {
        Statistic::Quantile(_) => variance::density_jacobian(pop, &w_eval, theta[0])?,
        _ => variance::jacobian_avg(&ef, pop, &w_eval, theta)?,
    };
    let v_prime = variance::vprime_stratified_srswor(&ef, pop, info, theta, Some(pop.deltas()))?;
    let v_super = if iid_superpop {
        Some(variance::v_super_iid(&ef, pop, &w_eval, theta)?)
    } else {
        None
    };
    variance::assemble(jac, v_prime, v_super, pop.len())
}

/// The estimating function bound to this sample, for use in variance sums.
pub fn build_ef(pop: &Population, w: &WeightVector, stat: &Statistic) -> Result<EstimatingFunction> {
    Ok(match stat {
        Statistic::Mean => EstimatingFunction::mean(),
        Statistic::Quantile(p) => EstimatingFunction::quantile(*p)?,
        Statistic::Gini => EstimatingFunction::gini_hat(solve::gini_with_context(pop, w)?),
        Statistic::LinReg => EstimatingFunction::linreg(pop.width() - 1),
    })
}

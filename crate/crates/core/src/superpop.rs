//! Superpopulation models: per-stratum income distributions built by
//! monotone cubic interpolation through binned frequency data, mixed into a
//! population-level c.d.f. with exact functionals (median, mean, Gini) and
//! large-sample reference variances for the study designs.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{bigdata_select, neyman_allocate, BigDataMechanism, StratifiedFrame};
use crate::estfun::{GiniContext, Population};
use crate::interp::MonotoneCubic;
use crate::numeric::{adaptive_simpson, bisect, mean_and_sample_variance};
use crate::report::Statistic;
use crate::weights::WeightVector;
use crate::{Error, Result};

/// A continuous distribution usable as a mixture component. Implementations
/// must be exact enough that `cdf(inverse(p)) = p` to around `1e-8`.
pub trait Cdf: Send + Sync {
    fn cdf(&self, y: f64) -> f64;
    fn inverse(&self, p: f64) -> f64;
    /// Truncation-safe support `(lo, hi)`: the mass outside must be
    /// negligible at quadrature tolerances.
    fn support(&self) -> (f64, f64);
    fn pdf(&self, y: f64) -> f64 {
        let h = 1e-6 * (1.0 + y.abs());
        (self.cdf(y + h) - self.cdf(y - h)) / (2.0 * h)
    }
}

/// A stratum c.d.f. given as a monotone cubic interpolant anchored at
/// `(x_min, 0)` and `(x_max, 1)`.
#[derive(Debug, Clone)]
pub struct MonotoneCdf {
    curve: MonotoneCubic,
}

impl MonotoneCdf {
    pub fn new(curve: MonotoneCubic) -> Result<Self> {
        let (xs, ys) = curve.knots();
        if ys[0] != 0.0 || *ys.last().unwrap() != 1.0 {
            return Err(Error::Construction(
                "a c.d.f. interpolant must run from 0 to 1".into(),
            ));
        }
        let _ = xs;
        Ok(MonotoneCdf { curve })
    }

    /// `E[Y] = hi - int_lo^hi F`, exact for the interpolant.
    pub fn mean(&self) -> f64 {
        self.curve.x_max() - self.curve.integral_to(self.curve.x_max())
    }

    pub fn curve(&self) -> &MonotoneCubic {
        &self.curve
    }
}

impl Cdf for MonotoneCdf {
    fn cdf(&self, y: f64) -> f64 {
        self.curve.eval(y)
    }

    fn inverse(&self, p: f64) -> f64 {
        self.curve.inverse(p)
    }

    fn support(&self) -> (f64, f64) {
        (self.curve.x_min(), self.curve.x_max())
    }

    fn pdf(&self, y: f64) -> f64 {
        self.curve.derivative(y)
    }
}

/// Binned frequency specification of one stratum distribution.
///
/// `brackets` are the given upper bounds `b_1..b_{m-1}` (weekly units); the
/// final bound is free and solved so the fitted mean matches `target_mean`.
/// `frequencies` are the `m` bracket masses in percent. All abscissae are
/// scaled by `scale = 52 * target_median / population_median` to annual units
/// before fitting.
#[derive(Debug, Clone)]
pub struct StratumCdfSpec {
    pub brackets: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub target_median: f64,
    pub target_mean: f64,
    pub scale: f64,
}

impl StratumCdfSpec {
    fn validate(&self) -> Result<()> {
        if self.frequencies.len() != self.brackets.len() + 1 {
            return Err(Error::Validation(format!(
                "expected {} frequencies for {} given brackets (the last bracket is solved)",
                self.brackets.len() + 1,
                self.brackets.len()
            )));
        }
        if self.brackets.is_empty() {
            return Err(Error::Validation("at least one given bracket is required".into()));
        }
        if self.brackets[0] <= 0.0 {
            return Err(Error::Validation("brackets must be positive".into()));
        }
        if self.brackets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("brackets must be strictly increasing".into()));
        }
        if self.frequencies.iter().any(|&r| r < 0.0) {
            return Err(Error::Validation("frequencies must be nonnegative".into()));
        }
        let total: f64 = self.frequencies.iter().sum();
        if (total - 100.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "frequencies must sum to 100, got {total}"
            )));
        }
        if !(self.scale > 0.0 && self.target_mean > 0.0 && self.target_median > 0.0) {
            return Err(Error::Validation(
                "scale, target mean and target median must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fits the monotone interpolant through the scaled knots, solving the free
/// last bracket so the distribution mean equals the target, and verifying the
/// interpolated median lands in the bracket holding the target median.
pub fn fit_stratum_cdf(spec: &StratumCdfSpec) -> Result<MonotoneCdf> {
    spec.validate()?;
    let m = spec.frequencies.len();
    let mut xs = Vec::with_capacity(m + 1);
    let mut ys = Vec::with_capacity(m + 1);
    xs.push(0.0);
    ys.push(0.0);
    let mut cum = 0.0;
    for (k, &r) in spec.frequencies.iter().enumerate() {
        cum += r / 100.0;
        if k + 1 < m {
            xs.push(spec.scale * spec.brackets[k]);
            ys.push(cum.min(1.0));
        }
    }
    ys.push(1.0);

    let x_last_known = *xs.last().unwrap();
    let mean_with = |x_m: f64| -> Result<f64> {
        let mut xs_full = xs.clone();
        xs_full.push(x_m);
        let curve = MonotoneCubic::new(xs_full, ys.clone())?;
        Ok(MonotoneCdf { curve }.mean())
    };

    let lo = x_last_known * (1.0 + 1e-9);
    let hi = x_last_known * 1e4;
    let g_lo = mean_with(lo)? - spec.target_mean;
    let g_hi = mean_with(hi)? - spec.target_mean;
    if !(g_lo < 0.0 && g_hi > 0.0) {
        return Err(Error::Construction(format!(
            "no admissible final bracket: mean range [{:.4}, {:.4}] does not cover the target {}",
            g_lo + spec.target_mean,
            g_hi + spec.target_mean,
            spec.target_mean
        )));
    }
    let x_m = bisect(
        |x| mean_with(x).map(|v| v - spec.target_mean).unwrap_or(f64::NAN),
        lo,
        hi,
        1e-13,
    )?;
    let mut xs_full = xs.clone();
    xs_full.push(x_m);
    let cdf = MonotoneCdf::new(MonotoneCubic::new(xs_full.clone(), ys.clone())?)?;
    let achieved = cdf.mean();
    if (achieved - spec.target_mean).abs() > 1e-7 * spec.target_mean {
        return Err(Error::Construction(format!(
            "mean constraint not met: {achieved} vs target {}",
            spec.target_mean
        )));
    }

    // the fitted median must fall inside the bracket holding the target median
    let j = xs_full.partition_point(|&x| x < spec.target_median);
    if j == 0 || j >= xs_full.len() + 1 {
        return Err(Error::Construction(format!(
            "target median {} lies outside the bracket range",
            spec.target_median
        )));
    }
    let (blo, bhi) = (xs_full[j - 1], xs_full[j.min(xs_full.len() - 1)]);
    let med = cdf.inverse(0.5);
    let slack = 1e-9 * bhi.max(1.0);
    if med < blo - slack || med > bhi + slack {
        return Err(Error::Construction(format!(
            "fitted median {med:.4} lies outside the target-median bracket [{blo:.4}, {bhi:.4}]"
        )));
    }
    Ok(cdf)
}

/// A finite mixture of stratum distributions.
pub struct SuperpopModel {
    proportions: Vec<f64>,
    components: Vec<Box<dyn Cdf>>,
}

impl SuperpopModel {
    /// `F(y) = sum_h p_h F_h(y)` with proportions summing to one.
    pub fn mixture(proportions: Vec<f64>, components: Vec<Box<dyn Cdf>>) -> Result<Self> {
        if proportions.len() != components.len() || components.is_empty() {
            return Err(Error::domain("mixture needs matching, nonempty proportions and components"));
        }
        let total: f64 = proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("mixture proportions must sum to 1, got {total}")));
        }
        if proportions.iter().any(|&p| p <= 0.0) {
            return Err(Error::domain("mixture proportions must be positive"));
        }
        Ok(SuperpopModel {
            proportions,
            components,
        })
    }

    pub fn n_strata(&self) -> usize {
        self.components.len()
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn component(&self, h: usize) -> &dyn Cdf {
        self.components[h].as_ref()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.proportions
            .iter()
            .zip(&self.components)
            .map(|(p, c)| p * c.cdf(y))
            .sum()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.proportions
            .iter()
            .zip(&self.components)
            .map(|(p, c)| p * c.pdf(y))
            .sum()
    }

    pub fn support(&self) -> (f64, f64) {
        let lo = self
            .components
            .iter()
            .map(|c| c.support().0)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .components
            .iter()
            .map(|c| c.support().1)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// One draw: stratum `h` with probability `p_h`, then `F_h^{-1}(U)`.
    pub fn sample(&self, rng: &mut impl Rng) -> (f64, u32) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut h = self.components.len() - 1;
        for (k, &p) in self.proportions.iter().enumerate() {
            acc += p;
            if u < acc {
                h = k;
                break;
            }
        }
        let v: f64 = rng.random();
        let v = v.clamp(1e-12, 1.0 - 1e-12);
        (self.components[h].inverse(v), h as u32)
    }

    pub fn sample_many(&self, n: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<u32>) {
        let mut values = Vec::with_capacity(n);
        let mut strata = Vec::with_capacity(n);
        for _ in 0..n {
            let (v, h) = self.sample(rng);
            values.push(v);
            strata.push(h);
        }
        (values, strata)
    }
}

/// Exact functionals of a superpopulation model.
#[derive(Debug, Clone)]
pub struct TrueFunctionals {
    pub median: f64,
    pub mean: f64,
    pub gini: f64,
}

impl TrueFunctionals {
    pub fn value_of(&self, stat: &Statistic) -> Result<f64> {
        match stat {
            Statistic::Mean => Ok(self.mean),
            Statistic::Quantile(p) if (*p - 0.5).abs() < 1e-12 => Ok(self.median),
            Statistic::Gini => Ok(self.gini),
            other => Err(Error::domain(format!(
                "no closed functional stored for {other:?}"
            ))),
        }
    }
}

/// Median by bisection on `F`, mean by quadrature of `1 - F`, and Gini by
/// `E[Y]^{-1} int F (1 - F)`. The quadrature tolerance is absolute, scaled by
/// the support width.
pub fn true_functionals(model: &SuperpopModel, quad_tol: f64) -> Result<TrueFunctionals> {
    let (lo, hi) = model.support();
    if !(hi > lo) {
        return Err(Error::domain("model support is degenerate"));
    }
    let median = bisect(|y| model.cdf(y) - 0.5, lo, hi, 1e-10)?;
    let tol = quad_tol * (hi - lo).max(1.0);
    let mean = lo + adaptive_simpson(&|y| 1.0 - model.cdf(y), lo, hi, tol)?;
    if lo < -1e-12 {
        return Err(Error::domain(
            "the Gini functional requires nonnegative support",
        ));
    }
    if !(mean > 0.0) {
        return Err(Error::domain("the Gini functional requires a positive mean"));
    }
    let gini = adaptive_simpson(&|y| model.cdf(y) * (1.0 - model.cdf(y)), lo, hi, tol)? / mean;
    Ok(TrueFunctionals { median, mean, gini })
}

/// Sampling design for a reference variance computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceDesign {
    /// Total survey sampling fraction `n / N`.
    pub sampling_fraction: f64,
    /// Big-data mechanism, when the design integrates a big-data set.
    pub big_data: Option<BigDataShare>,
    /// Survey drawn from non-big-data units only (big data treated as a
    /// completely enumerated stratum).
    pub exclude_big: bool,
}

/// Big-data mechanism sized relative to the population.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BigDataShare {
    pub threshold: f64,
    pub low_rate: f64,
    pub share: f64,
}

impl BigDataShare {
    pub fn mechanism(&self, n_pop: usize) -> BigDataMechanism {
        BigDataMechanism {
            threshold: self.threshold,
            low_rate: self.low_rate,
            target_size: (self.share * n_pop as f64).floor() as usize,
        }
    }
}

/// Large-sample design-variance reference `V'` for `sqrt(N) Psi_s(theta_0)`
/// under a Neyman-allocated stratified SRSWOR design on `m_draws`
/// observations from the model, evaluated at the true functional value
/// `theta0`. The within-stratum dispersions are taken at the population
/// level, which is the limit of the stratified variance estimator.
pub fn reference_vprime(
    model: &SuperpopModel,
    stat: &Statistic,
    design: &ReferenceDesign,
    theta0: f64,
    m_draws: usize,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if m_draws < 10_000 {
        return Err(Error::domain(format!(
            "reference variance needs at least 10^4 draws, got {m_draws}"
        )));
    }
    if !(design.sampling_fraction > 0.0 && design.sampling_fraction < 1.0) {
        return Err(Error::domain("reference sampling fraction must lie in (0, 1)"));
    }
    let (values, strata) = model.sample_many(m_draws, rng);
    let delta = match &design.big_data {
        Some(big) => bigdata_select(&values, &big.mechanism(m_draws), rng)?,
        None => vec![false; m_draws],
    };
    if design.exclude_big && design.big_data.is_none() {
        return Err(Error::domain("exclude_big requires a big-data mechanism"));
    }

    let psi = psi_at_truth(stat, &values, theta0)?;
    let n_total = (design.sampling_fraction * m_draws as f64).round() as usize;
    let frame = StratifiedFrame::from_labels(&strata);

    let mut parts: Vec<(f64, DMatrix<f64>)> = Vec::new();
    if design.exclude_big {
        // survey frame is the non-big-data subpopulation; B enters as a
        // completely enumerated stratum with zero design variance
        let mut sub_labels = Vec::new();
        let mut sub_idx = Vec::new();
        for i in 0..m_draws {
            if !delta[i] {
                sub_labels.push(strata[i]);
                sub_idx.push(i);
            }
        }
        let sub_frame = StratifiedFrame::from_labels(&sub_labels);
        let sub_y: Vec<f64> = sub_idx.iter().map(|&i| values[i]).collect();
        let plan = neyman_allocate(&sub_frame, &sub_y, n_total)?;
        for h in 0..sub_frame.n_strata() {
            let members = sub_frame.stratum(h);
            let psis: Vec<f64> = members.iter().map(|&k| psi[sub_idx[k]]).collect();
            let (_, var) = mean_and_sample_variance(&psis);
            let f_h = plan.sizes[h] as f64 / members.len() as f64;
            let share = members.len() as f64 / m_draws as f64;
            parts.push((share, DMatrix::from_element(1, 1, (1.0 - f_h) / f_h * var)));
        }
        let big_share = delta.iter().filter(|&&d| d).count() as f64 / m_draws as f64;
        if big_share > 0.0 {
            parts.push((big_share, DMatrix::zeros(1, 1)));
        }
    } else {
        let plan = neyman_allocate(&frame, &values, n_total)?;
        for h in 0..frame.n_strata() {
            let members = frame.stratum(h);
            // big-data units stay in the frame but drop out of the sums:
            // the estimator's limit is the within-stratum variance of
            // psi * I(not in B)
            let z: Vec<f64> = members
                .iter()
                .map(|&i| if delta[i] { 0.0 } else { psi[i] })
                .collect();
            let (_, var) = mean_and_sample_variance(&z);
            let f_h = plan.sizes[h] as f64 / members.len() as f64;
            let share = members.len() as f64 / m_draws as f64;
            parts.push((share, DMatrix::from_element(1, 1, (1.0 - f_h) / f_h * var)));
        }
    }
    crate::variance::vprime_stratified(&parts)
}

/// Superpopulation second-moment reference `V` for `sqrt(N) Psi_N(theta_0)`
/// and the Jacobian reference at the truth, from the same kind of draw.
pub fn reference_joint_terms(
    model: &SuperpopModel,
    stat: &Statistic,
    theta0: f64,
    m_draws: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let (values, _) = model.sample_many(m_draws, rng);
    let psi = psi_at_truth(stat, &values, theta0)?;
    let v_super = psi.iter().map(|p| p * p).sum::<f64>() / m_draws as f64;
    let jac = match stat {
        Statistic::Mean => -1.0,
        Statistic::Quantile(_) => model.pdf(theta0),
        Statistic::Gini => -(values.iter().sum::<f64>() / m_draws as f64),
        Statistic::LinReg => {
            return Err(Error::domain("regression has no scalar reference here"))
        }
    };
    Ok((v_super, jac))
}

fn psi_at_truth(stat: &Statistic, values: &[f64], theta0: f64) -> Result<Vec<f64>> {
    match stat {
        Statistic::Mean => Ok(values.iter().map(|y| y - theta0).collect()),
        Statistic::Quantile(p) => Ok(values
            .iter()
            .map(|&y| {
                if y < theta0 {
                    1.0 - p
                } else if y > theta0 {
                    -p
                } else {
                    0.0
                }
            })
            .collect()),
        Statistic::Gini => {
            let pop = Population::scalar(values.to_vec());
            let ctx = GiniContext::new(&pop, &WeightVector::unit(values.len()))?;
            Ok(values.iter().map(|&y| ctx.psi_hat(y, theta0)).collect())
        }
        Statistic::LinReg => Err(Error::domain("regression has no scalar reference here")),
    }
}

/// On-disk superpopulation specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperpopSpec {
    /// Reported population median used in the bracket scale factor.
    pub population_median: f64,
    pub strata: Vec<StratumSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub proportion: f64,
    pub median: f64,
    pub mean: f64,
    pub brackets: Vec<f64>,
    pub frequencies: Vec<f64>,
}

impl SuperpopSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: SuperpopSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strata.is_empty() {
            return Err(Error::Validation("at least one stratum is required".into()));
        }
        if !(self.population_median > 0.0) {
            return Err(Error::Validation("population median must be positive".into()));
        }
        let total: f64 = self.strata.iter().map(|s| s.proportion).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "stratum proportions must sum to 1, got {total}"
            )));
        }
        Ok(())
    }

    pub fn stratum_cdf_spec(&self, h: usize) -> StratumCdfSpec {
        let s = &self.strata[h];
        StratumCdfSpec {
            brackets: s.brackets.clone(),
            frequencies: s.frequencies.clone(),
            target_median: s.median,
            target_mean: s.mean,
            scale: 52.0 * s.median / self.population_median,
        }
    }

    /// Fits every stratum and assembles the mixture.
    pub fn build(&self) -> Result<SuperpopModel> {
        self.validate()?;
        let mut components: Vec<Box<dyn Cdf>> = Vec::with_capacity(self.strata.len());
        for h in 0..self.strata.len() {
            let cdf = fit_stratum_cdf(&self.stratum_cdf_spec(h)).map_err(|e| {
                Error::Construction(format!(
                    "stratum {} ({}): {e}",
                    h,
                    self.strata[h].name.clone().unwrap_or_default()
                ))
            })?;
            components.push(Box::new(cdf));
        }
        SuperpopModel::mixture(self.strata.iter().map(|s| s.proportion).collect(), components)
    }
}

/// Loads and builds a superpopulation model from a JSON spec file.
pub fn load_model(path: &Path) -> Result<SuperpopModel> {
    SuperpopSpec::load(path)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    pub(crate) struct UniformCdf {
        pub lo: f64,
        pub hi: f64,
    }

    impl Cdf for UniformCdf {
        fn cdf(&self, y: f64) -> f64 {
            ((y - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        }
        fn inverse(&self, p: f64) -> f64 {
            self.lo + p * (self.hi - self.lo)
        }
        fn support(&self) -> (f64, f64) {
            (self.lo, self.hi)
        }
        fn pdf(&self, y: f64) -> f64 {
            if y >= self.lo && y <= self.hi {
                1.0 / (self.hi - self.lo)
            } else {
                0.0
            }
        }
    }

    struct ExponentialCdf;

    impl Cdf for ExponentialCdf {
        fn cdf(&self, y: f64) -> f64 {
            if y <= 0.0 {
                0.0
            } else {
                1.0 - (-y).exp()
            }
        }
        fn inverse(&self, p: f64) -> f64 {
            -(1.0 - p).ln()
        }
        fn support(&self) -> (f64, f64) {
            (0.0, 30.0)
        }
        fn pdf(&self, y: f64) -> f64 {
            if y >= 0.0 {
                (-y).exp()
            } else {
                0.0
            }
        }
    }

    #[test]
    fn uniform_functionals() {
        let model = SuperpopModel::mixture(
            vec![1.0],
            vec![Box::new(UniformCdf { lo: 0.0, hi: 1.0 })],
        )
        .unwrap();
        let f = true_functionals(&model, 1e-9).unwrap();
        assert_relative_eq!(f.median, 0.5, epsilon = 1e-8);
        assert_relative_eq!(f.mean, 0.5, epsilon = 1e-7);
        assert_relative_eq!(f.gini, 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn exponential_gini_is_one_half() {
        let model = SuperpopModel::mixture(vec![1.0], vec![Box::new(ExponentialCdf)]).unwrap();
        let f = true_functionals(&model, 1e-9).unwrap();
        assert_relative_eq!(f.gini, 0.5, epsilon = 1e-6);
        assert_relative_eq!(f.median, 2f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn mixture_of_identical_components_is_the_component() {
        let model = SuperpopModel::mixture(
            vec![0.3, 0.7],
            vec![
                Box::new(UniformCdf { lo: 0.0, hi: 2.0 }),
                Box::new(UniformCdf { lo: 0.0, hi: 2.0 }),
            ],
        )
        .unwrap();
        for y in [0.0, 0.5, 1.0, 1.7, 2.0] {
            assert_relative_eq!(model.cdf(y), y / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mixture_rejects_bad_proportions() {
        let comps: Vec<Box<dyn Cdf>> = vec![
            Box::new(UniformCdf { lo: 0.0, hi: 1.0 }),
            Box::new(UniformCdf { lo: 0.0, hi: 1.0 }),
        ];
        assert!(SuperpopModel::mixture(vec![0.4, 0.4], comps).is_err());
    }

    #[test]
    fn fit_two_knot_spec_recovers_uniform() {
        // one given bracket plus a solved one; frequencies put all interior
        // mass uniformly, so the fitted curve is close to linear
        let spec = StratumCdfSpec {
            brackets: vec![1.0],
            frequencies: vec![50.0, 50.0],
            target_median: 1.0,
            target_mean: 1.0,
            scale: 1.0,
        };
        let cdf = fit_stratum_cdf(&spec).unwrap();
        assert_relative_eq!(cdf.mean(), 1.0, max_relative = 1e-8);
        assert_relative_eq!(cdf.cdf(0.0), 0.0);
        let (_, hi) = cdf.support();
        assert_relative_eq!(cdf.cdf(hi), 1.0);
    }

    #[test]
    fn fitted_cdf_mean_matches_independent_trapezoid_quadrature() {
        let spec = StratumCdfSpec {
            brackets: vec![100.0, 200.0, 300.0, 420.0],
            frequencies: vec![10.0, 25.0, 30.0, 20.0, 15.0],
            target_median: 250.0,
            target_mean: 300.0,
            scale: 1.0,
        };
        let cdf = fit_stratum_cdf(&spec).unwrap();
        let (lo, hi) = cdf.support();
        let grid = 400_000;
        let mut acc = 0.0;
        for k in 0..grid {
            let a = lo + (hi - lo) * k as f64 / grid as f64;
            let b = lo + (hi - lo) * (k + 1) as f64 / grid as f64;
            acc += 0.5 * ((1.0 - cdf.cdf(a)) + (1.0 - cdf.cdf(b))) * (b - a);
        }
        assert!(
            (acc - spec.target_mean).abs() <= 1e-6 * spec.target_mean,
            "quadrature mean {acc} vs target {}",
            spec.target_mean
        );
        // interpolation property at the given knots
        assert_relative_eq!(cdf.cdf(100.0), 0.10, epsilon = 1e-12);
        assert_relative_eq!(cdf.cdf(300.0), 0.65, epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_unattainable_means() {
        let spec = StratumCdfSpec {
            brackets: vec![1.0],
            frequencies: vec![50.0, 50.0],
            target_median: 1.0,
            target_mean: 0.2, // below any admissible tail
            scale: 1.0,
        };
        assert!(fit_stratum_cdf(&spec).is_err());
    }

    #[test]
    fn inverse_cdf_round_trip() {
        let spec = StratumCdfSpec {
            brackets: vec![100.0, 200.0, 300.0, 420.0],
            frequencies: vec![10.0, 25.0, 30.0, 20.0, 15.0],
            target_median: 250.0,
            target_mean: 300.0,
            scale: 1.0,
        };
        let cdf = fit_stratum_cdf(&spec).unwrap();
        for k in 1..100 {
            let u = k as f64 / 100.0;
            assert!((cdf.cdf(cdf.inverse(u)) - u).abs() <= 1e-8, "u = {u}");
        }
    }

    #[test]
    fn sampling_matches_the_mixture_distribution() {
        // Kolmogorov-Smirnov against the analytic two-uniform mixture
        let model = SuperpopModel::mixture(
            vec![0.35, 0.65],
            vec![
                Box::new(UniformCdf { lo: 0.0, hi: 1.0 }),
                Box::new(UniformCdf { lo: 0.5, hi: 3.0 }),
            ],
        )
        .unwrap();
        let n = 1_000_000;
        let mut rng = stream(21, 0, "ks");
        let (mut values, strata) = model.sample_many(n, &mut rng);

        // stratum shares converge to the proportions (binomial 4-sigma band)
        let share0 = strata.iter().filter(|&&h| h == 0).count() as f64 / n as f64;
        let se = (0.35 * 0.65 / n as f64).sqrt();
        assert!((share0 - 0.35).abs() < 4.0 * se, "share = {share0}");

        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d: f64 = 0.0;
        for (k, &y) in values.iter().enumerate() {
            let emp_hi = (k + 1) as f64 / n as f64;
            let emp_lo = k as f64 / n as f64;
            let f = model.cdf(y);
            d = d.max((emp_hi - f).abs()).max((f - emp_lo).abs());
        }
        // critical value at significance 1e-3
        let crit = 1.949 / (n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} exceeds {crit}");
    }

    #[test]
    fn reference_vprime_single_stratum_matches_closed_form() {
        let model = SuperpopModel::mixture(
            vec![1.0],
            vec![Box::new(UniformCdf { lo: 0.0, hi: 12.0 })],
        )
        .unwrap();
        let truths = true_functionals(&model, 1e-9).unwrap();
        let design = ReferenceDesign {
            sampling_fraction: 0.1,
            big_data: None,
            exclude_big: false,
        };
        let mut rng = stream(22, 0, "refv");
        let v = reference_vprime(&model, &Statistic::Mean, &design, truths.mean, 200_000, &mut rng)
            .unwrap();
        let var_y = 12.0 * 12.0 / 12.0;
        let expect = (1.0 - 0.1) / 0.1 * var_y;
        assert!(
            (v[(0, 0)] - expect).abs() <= 0.02 * expect,
            "{} vs {}",
            v[(0, 0)],
            expect
        );
    }

    #[test]
    fn reference_vprime_degenerate_strata_vanish() {
        // near-point-mass strata: psi dispersion is numerically zero
        let model = SuperpopModel::mixture(
            vec![0.5, 0.5],
            vec![
                Box::new(UniformCdf { lo: 1.0, hi: 1.0 + 1e-9 }),
                Box::new(UniformCdf { lo: 5.0, hi: 5.0 + 1e-9 }),
            ],
        )
        .unwrap();
        let design = ReferenceDesign {
            sampling_fraction: 0.1,
            big_data: None,
            exclude_big: false,
        };
        let mut rng = stream(23, 0, "refv-degenerate");
        let v = reference_vprime(&model, &Statistic::Mean, &design, 3.0, 50_000, &mut rng).unwrap();
        assert!(v[(0, 0)].abs() < 1e-10, "got {}", v[(0, 0)]);
    }

    #[test]
    fn reference_vprime_monte_carlo_error_shrinks() {
        let model = SuperpopModel::mixture(
            vec![1.0],
            vec![Box::new(UniformCdf { lo: 0.0, hi: 10.0 })],
        )
        .unwrap();
        let design = ReferenceDesign {
            sampling_fraction: 0.2,
            big_data: None,
            exclude_big: false,
        };
        let theta0 = 5.0;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for rep in 0..8 {
            let mut rng = stream(24, rep, "refv-m");
            a.push(
                reference_vprime(&model, &Statistic::Mean, &design, theta0, 20_000, &mut rng)
                    .unwrap()[(0, 0)],
            );
            let mut rng = stream(25, rep, "refv-2m");
            b.push(
                reference_vprime(&model, &Statistic::Mean, &design, theta0, 40_000, &mut rng)
                    .unwrap()[(0, 0)],
            );
        }
        let (ma, va) = mean_and_sample_variance(&a);
        let (mb, _) = mean_and_sample_variance(&b);
        // doubling the draws moves the estimate by O(M^{-1/2})
        assert!((ma - mb).abs() < 5.0 * (va / a.len() as f64).sqrt().max(1e-6) * 3.0);
    }

    #[test]
    fn spec_file_round_trip_and_validation() {
        let spec = SuperpopSpec {
            population_median: 52.0,
            strata: vec![StratumSpec {
                name: Some("only".into()),
                proportion: 1.0,
                median: 52.0,
                mean: 60.0,
                brackets: vec![0.5, 1.0, 1.5, 2.0],
                frequencies: vec![30.0, 25.0, 25.0, 10.0, 10.0],
            }],
        };
        let text = serde_json::to_string(&spec).unwrap();
        let parsed: SuperpopSpec = serde_json::from_str(&text).unwrap();
        parsed.validate().unwrap();
        let model = parsed.build().unwrap();
        assert_eq!(model.n_strata(), 1);

        let mut bad = spec.clone();
        bad.strata[0].proportion = 0.9;
        assert!(bad.validate().is_err());
    }
}

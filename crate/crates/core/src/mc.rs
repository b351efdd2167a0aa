//! Monte Carlo study driver: seeded replicates comparing big-data-only,
//! survey-only, and integrated estimators of the median and Gini index over a
//! grid of population sizes, with bias/variance summaries and CSV export.
//!
//! Replicates are independent work units keyed by `(seed, replicate id,
//! purpose)`; the reduction order is fixed, so output is identical at any
//! worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{bigdata_select, neyman_allocate, stratified_srswor, StratifiedFrame};
use crate::report::{estimate, EstimateReport, Statistic};
use crate::rng::stream;
use crate::superpop::{
    reference_joint_terms, reference_vprime, true_functionals, BigDataShare, ReferenceDesign,
    SuperpopModel, TrueFunctionals,
};
use crate::variance::{StratifiedSrsworInfo, StratumSample};
use crate::weights::{horvitz_thompson, integrate, WeightVector};
use crate::{estfun::Population, Error, Result};

/// Study configuration. `superpop` is the path of the superpopulation spec,
/// kept verbatim for the run manifest; the loaded model is passed separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub superpop: String,
    pub population_sizes: Vec<usize>,
    pub sampling_fraction: f64,
    pub big_data: BigDataShare,
    pub replicates: usize,
    pub seed: u64,
    pub statistics: Vec<StudyStatistic>,
    #[serde(default = "default_reference_draws")]
    pub reference_draws: usize,
    #[serde(default = "default_true")]
    pub variance_reports: bool,
}

fn default_reference_draws() -> usize {
    1_000_000
}

fn default_true() -> bool {
    true
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_sizes.is_empty() {
            return Err(Error::Validation("population size grid is empty".into()));
        }
        if self.population_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("population sizes must be strictly increasing".into()));
        }
        if self.replicates < 2 {
            return Err(Error::Validation("at least 2 replicates are required".into()));
        }
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "sampling fraction {} must lie in (0, 1)",
                self.sampling_fraction
            )));
        }
        if !(self.big_data.share > 0.0 && self.big_data.share < 1.0) {
            return Err(Error::Validation(format!(
                "big-data share {} must lie in (0, 1)",
                self.big_data.share
            )));
        }
        if !(self.big_data.low_rate > 0.0 && self.big_data.low_rate <= 1.0) {
            return Err(Error::Validation(format!(
                "big-data low-rate {} must lie in (0, 1]",
                self.big_data.low_rate
            )));
        }
        if self.statistics.is_empty() {
            return Err(Error::Validation("at least one statistic is required".into()));
        }
        if self.reference_draws < 10_000 {
            return Err(Error::Validation("reference draws must be at least 10^4".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: StudyConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Statistics covered by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyStatistic {
    Median,
    Gini,
}

impl StudyStatistic {
    pub fn statistic(&self) -> Statistic {
        match self {
            StudyStatistic::Median => Statistic::Quantile(0.5),
            StudyStatistic::Gini => Statistic::Gini,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StudyStatistic::Median => "median",
            StudyStatistic::Gini => "gini",
        }
    }
}

/// The four estimators compared by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Unweighted estimate over the big-data units only.
    BigDataOnly,
    /// Horvitz-Thompson estimate over the survey drawn from the full frame.
    SurveyOnly,
    /// Integrated weights with the full-frame survey.
    Integrated,
    /// Integrated weights with the survey drawn from non-big-data units.
    StratIntegrated,
}

pub const ESTIMATORS: [EstimatorKind; 4] = [
    EstimatorKind::BigDataOnly,
    EstimatorKind::SurveyOnly,
    EstimatorKind::Integrated,
    EstimatorKind::StratIntegrated,
];

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::BigDataOnly => "big-data-only",
            EstimatorKind::SurveyOnly => "survey-only",
            EstimatorKind::Integrated => "integrated",
            EstimatorKind::StratIntegrated => "strat-integrated",
        }
    }
}

/// One estimator's output in one cell.
#[derive(Debug, Clone)]
pub struct CellEstimate {
    pub value: f64,
    pub design_var: Option<f64>,
    pub joint_var: Option<f64>,
}

/// All estimates for one population size within a replicate.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub n_pop: usize,
    /// indexed `[statistic][estimator]` following the config order and
    /// [`ESTIMATORS`]
    pub estimates: Vec<Vec<CellEstimate>>,
}

#[derive(Debug, Clone)]
pub enum CellOutcome {
    Ok(CellResult),
    Failed { reason: String },
}

/// All cells of one replicate, in population-grid order.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub replicate: u64,
    pub cells: Vec<CellOutcome>,
}

/// The max-size population draw for a replicate; population `k` is its
/// prefix of length `N_k`.
pub fn replicate_population(
    model: &SuperpopModel,
    seed: u64,
    replicate: u64,
    n: usize,
) -> (Vec<f64>, Vec<u32>) {
    let mut rng = stream(seed, replicate, "population");
    model.sample_many(n, &mut rng)
}

/// Runs one replicate across the whole population grid.
pub fn run_replicate(cfg: &StudyConfig, model: &SuperpopModel, replicate: u64) -> ReplicateResult {
    let n_max = *cfg.population_sizes.last().unwrap();
    let (values, strata) = replicate_population(model, cfg.seed, replicate, n_max);
    let cells = cfg
        .population_sizes
        .iter()
        .enumerate()
        .map(|(k, &n_k)| match run_cell(cfg, replicate, k, &values[..n_k], &strata[..n_k]) {
            Ok(cell) => CellOutcome::Ok(cell),
            Err(e) => CellOutcome::Failed { reason: e.to_string() },
        })
        .collect();
    ReplicateResult { replicate, cells }
}

fn run_cell(
    cfg: &StudyConfig,
    replicate: u64,
    k: usize,
    values: &[f64],
    strata: &[u32],
) -> Result<CellResult> {
    let n_pop = values.len();
    let mech = cfg.big_data.mechanism(n_pop);
    let mut rng_big = stream(cfg.seed, replicate, &format!("bigdata-{k}"));
    let delta = bigdata_select(values, &mech, &mut rng_big)?;

    let pop = Population::scalar(values.to_vec())
        .with_strata(strata.to_vec())
        .with_delta(delta.clone());
    let frame = StratifiedFrame::from_labels(strata);
    let n_total = (cfg.sampling_fraction * n_pop as f64).round() as usize;

    // survey A over the full frame
    let plan_a = neyman_allocate(&frame, values, n_total)?;
    let mut rng_a = stream(cfg.seed, replicate, &format!("survey-a-{k}"));
    let sample_a = stratified_srswor(&frame, &plan_a, &mut rng_a, None)?;

    // survey A' over the non-big-data units, same total size, allocation
    // recomputed on the reduced frame
    let plan_ap = {
        let sub_labels: Vec<u32> = (0..n_pop).filter(|&i| !delta[i]).map(|i| strata[i]).collect();
        let sub_values: Vec<f64> = (0..n_pop).filter(|&i| !delta[i]).map(|i| values[i]).collect();
        let sub_frame = StratifiedFrame::from_labels(&sub_labels);
        if sub_frame.n_strata() != frame.n_strata() {
            return Err(Error::domain("a stratum is fully covered by the big data"));
        }
        neyman_allocate(&sub_frame, &sub_values, n_total)?
    };
    let mut rng_ap = stream(cfg.seed, replicate, &format!("survey-aprime-{k}"));
    let sample_ap = stratified_srswor(&frame, &plan_ap, &mut rng_ap, Some(&delta))?;

    let w_big = WeightVector::raw(delta.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect());
    let w_survey = horvitz_thompson(&sample_a.membership)?;
    let w_int = integrate(&delta, &w_survey);
    let w_strat_int = integrate(&delta, &horvitz_thompson(&sample_ap.membership)?);

    let info_a = StratifiedSrsworInfo {
        strata: sample_a
            .draws
            .iter()
            .map(|d| StratumSample {
                population_fraction: d.stratum_size as f64 / n_pop as f64,
                sampling_fraction: d.members.len() as f64 / d.frame_size as f64,
                sample_size: d.members.len(),
                units: d.members.clone(),
            })
            .collect(),
        enumerated_fraction: 0.0,
    };
    let big_count = delta.iter().filter(|&&d| d).count();
    let info_ap = StratifiedSrsworInfo {
        strata: sample_ap
            .draws
            .iter()
            .map(|d| StratumSample {
                population_fraction: d.frame_size as f64 / n_pop as f64,
                sampling_fraction: d.members.len() as f64 / d.frame_size as f64,
                sample_size: d.members.len(),
                units: d.members.clone(),
            })
            .collect(),
        enumerated_fraction: big_count as f64 / n_pop as f64,
    };

    let mut per_stat = Vec::with_capacity(cfg.statistics.len());
    for stat in &cfg.statistics {
        let s = stat.statistic();
        let with_var = cfg.variance_reports;
        let cells = vec![
            cell_estimate(estimate(&pop, &w_big, &s, None, false)?),
            cell_estimate(estimate(&pop, &w_survey, &s, with_var.then_some(&info_a), true)?),
            cell_estimate(estimate(&pop, &w_int, &s, with_var.then_some(&info_a), true)?),
            cell_estimate(estimate(&pop, &w_strat_int, &s, with_var.then_some(&info_ap), true)?),
        ];
        per_stat.push(cells);
    }
    Ok(CellResult {
        n_pop,
        estimates: per_stat,
    })
}

fn cell_estimate(rep: EstimateReport) -> CellEstimate {
    CellEstimate {
        value: rep.theta[0],
        design_var: rep.variance.as_ref().map(|v| v.design_var[(0, 0)]),
        joint_var: rep.variance.as_ref().and_then(|v| v.joint_var.as_ref().map(|m| m[(0, 0)])),
    }
}

/// One summary cell of the study.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub n_pop: usize,
    pub statistic: StudyStatistic,
    pub estimator: EstimatorKind,
    pub replicates_used: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub bias_ci: (f64, f64),
    /// `N * Var(theta_hat)` across replicates.
    pub variance_adjusted: f64,
    pub variance_adjusted_ci: (f64, f64),
    /// Mean of the per-replicate design-variance estimates, when computed.
    pub mean_design_var: Option<f64>,
}

/// Size-adjusted asymptotic variance reference for one estimator.
#[derive(Debug, Clone)]
pub struct ReferenceRow {
    pub statistic: StudyStatistic,
    pub estimator: EstimatorKind,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct FailureCount {
    pub n_pop: usize,
    pub failed: usize,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
    pub references: Vec<ReferenceRow>,
    pub failures: Vec<FailureCount>,
    pub truths: Vec<(StudyStatistic, f64)>,
    pub statistics: Vec<StudyStatistic>,
    pub population_sizes: Vec<usize>,
}

impl StudySummary {
    pub fn row(&self, n: usize, stat: StudyStatistic, est: EstimatorKind) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.n_pop == n && r.statistic == stat && r.estimator == est)
    }

    pub fn reference(&self, stat: StudyStatistic, est: EstimatorKind) -> Option<f64> {
        self.references
            .iter()
            .find(|r| r.statistic == stat && r.estimator == est)
            .map(|r| r.value)
    }

    /// Monte Carlo standard error of the size-adjusted variance in a cell
    /// (half the 95% interval width over 1.96).
    pub fn variance_mc_se(&self, n: usize, stat: StudyStatistic, est: EstimatorKind) -> Option<f64> {
        self.row(n, stat, est)
            .map(|r| (r.variance_adjusted_ci.1 - r.variance_adjusted_ci.0) / (2.0 * 1.96))
    }
}

const MAX_FAILURE_RATE: f64 = 0.01;
const Z95: f64 = 1.96;

/// Bias and variance summaries with normal-approximation confidence
/// intervals (fourth-central-moment standard error for the variance).
pub fn summarize(
    cfg: &StudyConfig,
    results: &[ReplicateResult],
    truths: &TrueFunctionals,
    references: Vec<ReferenceRow>,
) -> Result<StudySummary> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (k, &n_k) in cfg.population_sizes.iter().enumerate() {
        let failed = results
            .iter()
            .filter(|r| matches!(r.cells[k], CellOutcome::Failed { .. }))
            .count();
        failures.push(FailureCount {
            n_pop: n_k,
            failed,
            total: results.len(),
        });
        if failed as f64 > MAX_FAILURE_RATE * results.len() as f64 {
            let reason = results
                .iter()
                .find_map(|r| match &r.cells[k] {
                    CellOutcome::Failed { reason } => Some(reason.clone()),
                    _ => None,
                })
                .unwrap_or_default();
            return Err(Error::Numeric(format!(
                "study cell N = {n_k} aborted: {failed}/{} replicates failed ({reason})",
                results.len()
            )));
        }
        for (si, stat) in cfg.statistics.iter().enumerate() {
            let truth = truths.value_of(&stat.statistic())?;
            for (ei, est) in ESTIMATORS.iter().enumerate() {
                let mut values = Vec::with_capacity(results.len());
                let mut design_vars = Vec::new();
                for r in results {
                    if let CellOutcome::Ok(cell) = &r.cells[k] {
                        let e = &cell.estimates[si][ei];
                        values.push(e.value);
                        if let Some(dv) = e.design_var {
                            design_vars.push(dv);
                        }
                    }
                }
                let r_used = values.len();
                if r_used < 2 {
                    return Err(Error::Numeric(format!(
                        "study cell N = {n_k} has fewer than 2 successful replicates"
                    )));
                }
                let rf = r_used as f64;
                let mean = values.iter().sum::<f64>() / rf;
                let mut m2 = 0.0;
                let mut m4 = 0.0;
                for v in &values {
                    let d = v - mean;
                    m2 += d * d;
                    m4 += d * d * d * d;
                }
                let s2 = m2 / (rf - 1.0);
                m4 /= rf;
                let bias = mean - truth;
                let bias_se = (s2 / rf).sqrt();
                let var_se = ((m4 - s2 * s2 * (rf - 3.0) / (rf - 1.0)).max(0.0) / rf).sqrt();
                let nf = n_k as f64;
                rows.push(SummaryRow {
                    n_pop: n_k,
                    statistic: *stat,
                    estimator: *est,
                    replicates_used: r_used,
                    mean_estimate: mean,
                    bias,
                    bias_ci: (bias - Z95 * bias_se, bias + Z95 * bias_se),
                    variance_adjusted: nf * s2,
                    variance_adjusted_ci: (nf * (s2 - Z95 * var_se), nf * (s2 + Z95 * var_se)),
                    mean_design_var: if design_vars.is_empty() {
                        None
                    } else {
                        Some(design_vars.iter().sum::<f64>() / design_vars.len() as f64)
                    },
                });
            }
        }
    }
    Ok(StudySummary {
        rows,
        references,
        failures,
        truths: cfg
            .statistics
            .iter()
            .map(|s| Ok((*s, truths.value_of(&s.statistic())?)))
            .collect::<Result<Vec<_>>>()?,
        statistics: cfg.statistics.clone(),
        population_sizes: cfg.population_sizes.clone(),
    })
}

/// Size-adjusted asymptotic joint-variance references
/// `(V' + V) / jacobian^2` for the three design-backed estimators.
pub fn compute_references(
    cfg: &StudyConfig,
    model: &SuperpopModel,
    truths: &TrueFunctionals,
) -> Result<Vec<ReferenceRow>> {
    let m = cfg.reference_draws;
    let mut out = Vec::new();
    for stat in &cfg.statistics {
        let s = stat.statistic();
        let theta0 = truths.value_of(&s)?;
        let mut rng = stream(cfg.seed, u64::MAX, &format!("reference-joint-{}", stat.label()));
        let (v_super, jac) = reference_joint_terms(model, &s, theta0, m, &mut rng)?;
        for est in [
            EstimatorKind::SurveyOnly,
            EstimatorKind::Integrated,
            EstimatorKind::StratIntegrated,
        ] {
            let design = ReferenceDesign {
                sampling_fraction: cfg.sampling_fraction,
                big_data: match est {
                    EstimatorKind::SurveyOnly => None,
                    _ => Some(cfg.big_data),
                },
                exclude_big: est == EstimatorKind::StratIntegrated,
            };
            let mut rng = stream(
                cfg.seed,
                u64::MAX,
                &format!("reference-vprime-{}-{}", stat.label(), est.label()),
            );
            let vp = reference_vprime(model, &s, &design, theta0, m, &mut rng)?;
            out.push(ReferenceRow {
                statistic: *stat,
                estimator: est,
                value: (vp[(0, 0)] + v_super) / (jac * jac),
            });
        }
    }
    Ok(out)
}

/// Runs the full study: references, replicates (parallel over a dedicated
/// pool when `workers` is set), and summaries.
pub fn run_study(cfg: &StudyConfig, model: &SuperpopModel, workers: Option<usize>) -> Result<StudySummary> {
    cfg.validate()?;
    let truths = true_functionals(model, 1e-8)?;
    let references = compute_references(cfg, model, &truths)?;
    let replicate_ids: Vec<u64> = (0..cfg.replicates as u64).collect();
    let results: Vec<ReplicateResult> = match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
            pool.install(|| {
                replicate_ids
                    .par_iter()
                    .map(|&r| run_replicate(cfg, model, r))
                    .collect()
            })
        }
        None => replicate_ids
            .par_iter()
            .map(|&r| run_replicate(cfg, model, r))
            .collect(),
    };
    summarize(cfg, &results, &truths, references)
}

/// Writes one CSV per figure (`<statistic>_bias.csv`, `<statistic>_var.csv`)
/// with columns `n,estimator,statistic,value,ci_lo,ci_hi`. Variance files
/// carry the asymptotic reference series as extra rows, with the estimator
/// labels suffixed `-asymptotic`. Output is byte-reproducible for a given
/// summary.
pub fn export(summary: &StudySummary, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for stat in &summary.statistics {
        for measure in ["bias", "var"] {
            let mut text = String::from("n,estimator,statistic,value,ci_lo,ci_hi\n");
            for &n in &summary.population_sizes {
                for est in ESTIMATORS {
                    let row = summary
                        .row(n, *stat, est)
                        .ok_or_else(|| Error::Numeric("missing summary cell".into()))?;
                    let (value, lo, hi) = match measure {
                        "bias" => (row.bias, row.bias_ci.0, row.bias_ci.1),
                        _ => (
                            row.variance_adjusted,
                            row.variance_adjusted_ci.0,
                            row.variance_adjusted_ci.1,
                        ),
                    };
                    writeln!(
                        text,
                        "{n},{},{},{value},{lo},{hi}",
                        est.label(),
                        stat.label()
                    )
                    .unwrap();
                }
                if measure == "var" {
                    for r in summary
                        .references
                        .iter()
                        .filter(|r| r.statistic == *stat)
                    {
                        writeln!(
                            text,
                            "{n},{}-asymptotic,{},{},{},{}",
                            r.estimator.label(),
                            stat.label(),
                            r.value,
                            r.value,
                            r.value
                        )
                        .unwrap();
                    }
                }
            }
            let path = out_dir.join(format!("{}_{measure}.csv", stat.label()));
            std::fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

//! Weight vectors and survey membership.
//!
//! Weights are materialised for the full population index set, with zeros for
//! unsampled units: the sample is exactly `{i : w_i != 0}`.

use std::fmt;

use crate::{Error, Result};

/// Provenance of a weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightScheme {
    /// Horvitz-Thompson: `alpha_i / pi_i`.
    Ht,
    /// Data-integrated: `delta_i + (1 - delta_i) w_i`.
    Di,
    /// All ones, or an externally supplied vector.
    Unit,
    /// Rescaled to mean one from the inner scheme.
    Normalized(Box<WeightScheme>),
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::Ht => write!(f, "horvitz-thompson"),
            WeightScheme::Di => write!(f, "data-integrated"),
            WeightScheme::Unit => write!(f, "unit"),
            WeightScheme::Normalized(inner) => write!(f, "normalized({inner})"),
        }
    }
}

/// Nonnegative weights over the whole population, tagged with their scheme
/// and a declared design-unbiasedness flag (`E[w_i | Y] = 1`). The flag is
/// set by constructors, not checked at runtime.
#[derive(Debug, Clone)]
pub struct WeightVector {
    w: Vec<f64>,
    scheme: WeightScheme,
    design_unbiased: bool,
}

impl WeightVector {
    /// All-ones weights (the census case).
    pub fn unit(n: usize) -> Self {
        WeightVector {
            w: vec![1.0; n],
            scheme: WeightScheme::Unit,
            design_unbiased: true,
        }
    }

    /// Wraps an externally supplied nonnegative vector without any
    /// unbiasedness claim.
    pub fn raw(w: Vec<f64>) -> Self {
        assert!(w.iter().all(|&x| x >= 0.0), "weights must be nonnegative");
        WeightVector {
            w,
            scheme: WeightScheme::Unit,
            design_unbiased: false,
        }
    }

    pub(crate) fn with_parts(w: Vec<f64>, scheme: WeightScheme, design_unbiased: bool) -> Self {
        WeightVector {
            w,
            scheme,
            design_unbiased,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, i: usize) -> f64 {
        self.w[i]
    }

    pub fn scheme(&self) -> &WeightScheme {
        &self.scheme
    }

    pub fn design_unbiased(&self) -> bool {
        self.design_unbiased
    }

    /// Indices of the observable units.
    pub fn sample(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&i| self.w[i] != 0.0).collect()
    }

    pub fn mean(&self) -> f64 {
        self.w.iter().sum::<f64>() / self.w.len() as f64
    }

    /// The weight values rescaled to mean one, without changing `self`.
    pub fn normalized_values(&self) -> Result<Vec<f64>> {
        let mean = self.mean();
        if !(mean > 0.0) {
            return Err(Error::domain("cannot normalise weights with nonpositive mean"));
        }
        Ok(self.w.iter().map(|&x| x / mean).collect())
    }
}

/// A realized survey membership: indicators `alpha_i`, first-order inclusion
/// probabilities `pi_i`, and an accessor for the pairwise probabilities
/// `pi_ij` implied by the design.
///
/// Units enumerated outside the survey frame (a completely enumerated
/// big-data stratum) carry `pi = 1` with `alpha = false`: they are observed
/// with certainty through the other source and never drawn by the survey.
#[derive(Debug, Clone)]
pub struct MembershipRealization {
    alpha: Vec<bool>,
    pi: Vec<f64>,
    pairwise: Pairwise,
}

#[derive(Debug, Clone)]
pub(crate) enum Pairwise {
    /// Every unit included with probability one.
    Census,
    /// Fixed-size simple random sample without replacement.
    Srswor { n: usize, n_pop: usize },
    /// Independent SRSWOR within strata; `enumerated[i]` marks frame-excluded
    /// units treated as certain.
    StratifiedSrswor {
        stratum_of: Vec<u32>,
        draw_n: Vec<usize>,
        draw_frame: Vec<usize>,
        enumerated: Vec<bool>,
    },
}

impl MembershipRealization {
    pub(crate) fn new(alpha: Vec<bool>, pi: Vec<f64>, pairwise: Pairwise) -> Result<Self> {
        if alpha.len() != pi.len() {
            return Err(Error::DimensionMismatch {
                expected: alpha.len(),
                got: pi.len(),
            });
        }
        if pi.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::domain("inclusion probabilities must lie in (0, 1]"));
        }
        Ok(MembershipRealization { alpha, pi, pairwise })
    }

    /// Census membership: everyone observed with probability one.
    pub fn census(n: usize) -> Self {
        MembershipRealization {
            alpha: vec![true; n],
            pi: vec![1.0; n],
            pairwise: Pairwise::Census,
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self, i: usize) -> bool {
        self.alpha[i]
    }

    pub fn sampled(&self) -> Vec<usize> {
        (0..self.alpha.len()).filter(|&i| self.alpha[i]).collect()
    }

    pub fn pi(&self, i: usize) -> f64 {
        self.pi[i]
    }

    /// Second-order inclusion probability `pi_ij`; `pi2(i, i) = pi_i`.
    pub fn pi2(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.pi[i];
        }
        match &self.pairwise {
            Pairwise::Census => 1.0,
            Pairwise::Srswor { n, n_pop } => {
                let n = *n as f64;
                let m = *n_pop as f64;
                n * (n - 1.0) / (m * (m - 1.0))
            }
            Pairwise::StratifiedSrswor {
                stratum_of,
                draw_n,
                draw_frame,
                enumerated,
            } => {
                if enumerated[i] {
                    return self.pi[j];
                }
                if enumerated[j] {
                    return self.pi[i];
                }
                if stratum_of[i] != stratum_of[j] {
                    return self.pi[i] * self.pi[j];
                }
                let h = stratum_of[i] as usize;
                let n = draw_n[h] as f64;
                let m = draw_frame[h] as f64;
                n * (n - 1.0) / (m * (m - 1.0))
            }
        }
    }
}

/// Horvitz-Thompson weights `w_i = alpha_i / pi_i`.
pub fn horvitz_thompson(m: &MembershipRealization) -> Result<WeightVector> {
    let w = m
        .alpha
        .iter()
        .zip(&m.pi)
        .map(|(&a, &p)| if a { 1.0 / p } else { 0.0 })
        .collect();
    Ok(WeightVector::with_parts(w, WeightScheme::Ht, true))
}

/// Data-integrated weights `w_i^DI = delta_i + (1 - delta_i) w_i`: big-data
/// units get unit weight, survey weights cover the rest. Requires the survey
/// weights to be design-unbiased so the integrated weights are too.
pub fn integrate(delta: &[bool], w: &WeightVector) -> WeightVector {
    assert_eq!(delta.len(), w.len(), "delta and weight lengths must match");
    assert!(
        w.design_unbiased(),
        "integrated weights require design-unbiased survey weights"
    );
    let out = delta
        .iter()
        .zip(w.values())
        .map(|(&d, &wi)| if d { 1.0 } else { wi })
        .collect();
    WeightVector::with_parts(out, WeightScheme::Di, true)
}

/// Normalised weights `w'_i = w_i / ((1/N) sum_j w_j)`; the output has mean
/// one. The design-unbiasedness flag is dropped: the ratio is unbiased only
/// asymptotically.
pub fn normalize(w: &WeightVector) -> Result<WeightVector> {
    let values = w.normalized_values()?;
    Ok(WeightVector::with_parts(
        values,
        WeightScheme::Normalized(Box::new(w.scheme().clone())),
        false,
    ))
}

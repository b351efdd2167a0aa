//! Sampling mechanisms and survey-design utilities: SRSWOR, stratified
//! SRSWOR with an optional excluded (completely enumerated) set, the biased
//! big-data selection mechanism, Neyman allocation, and optimal allocation of
//! a total sampling fraction across strata.

use rand::Rng;

use crate::weights::{MembershipRealization, Pairwise};
use crate::{Error, Result};

/// Strata as index lists partitioning `0..n_pop`.
#[derive(Debug, Clone)]
pub struct StratifiedFrame {
    strata: Vec<Vec<usize>>,
    n_pop: usize,
}

impl StratifiedFrame {
    /// Builds the frame from per-unit labels `0..H`.
    pub fn from_labels(labels: &[u32]) -> Self {
        let h = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut strata = vec![Vec::new(); h];
        for (i, &s) in labels.iter().enumerate() {
            strata[s as usize].push(i);
        }
        StratifiedFrame {
            strata,
            n_pop: labels.len(),
        }
    }

    pub fn from_strata(strata: Vec<Vec<usize>>) -> Result<Self> {
        let n_pop: usize = strata.iter().map(|s| s.len()).sum();
        let mut seen = vec![false; n_pop];
        for s in &strata {
            for &i in s {
                if i >= n_pop || seen[i] {
                    return Err(Error::domain("strata must partition the population index set"));
                }
                seen[i] = true;
            }
        }
        Ok(StratifiedFrame { strata, n_pop })
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn n_pop(&self) -> usize {
        self.n_pop
    }

    pub fn stratum(&self, h: usize) -> &[usize] {
        &self.strata[h]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.strata.iter().map(|s| s.len()).collect()
    }

    /// `F_h = N_h / N`.
    pub fn fractions(&self) -> Vec<f64> {
        self.strata
            .iter()
            .map(|s| s.len() as f64 / self.n_pop as f64)
            .collect()
    }
}

/// Integer per-stratum sample sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationPlan {
    pub sizes: Vec<usize>,
}

impl AllocationPlan {
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// The big-data selection mechanism: a without-replacement draw of
/// `target_size` units with relative selection rates 1 for values at or above
/// `threshold` and `low_rate` below it.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BigDataMechanism {
    pub threshold: f64,
    pub low_rate: f64,
    pub target_size: usize,
}

/// Uniform size-`n` subset of `0..n_pop`, returned sorted.
pub fn srswor(n_pop: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n > n_pop {
        return Err(Error::domain(format!("cannot sample {n} of {n_pop} without replacement")));
    }
    let mut idx = rand::seq::index::sample(rng, n_pop, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// SRSWOR together with its membership realization
/// (`pi = n/N`, `pi_ij = n(n-1)/(N(N-1))`).
pub fn srswor_membership(
    n_pop: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, MembershipRealization)> {
    if n == 0 {
        return Err(Error::domain("membership realization needs a nonempty sample"));
    }
    let sampled = srswor(n_pop, n, rng)?;
    let mut alpha = vec![false; n_pop];
    for &i in &sampled {
        alpha[i] = true;
    }
    let pi = vec![n as f64 / n_pop as f64; n_pop];
    let m = MembershipRealization::new(alpha, pi, Pairwise::Srswor { n, n_pop })?;
    Ok((sampled, m))
}

/// Neyman allocation: `n_h` proportional to `N_h * S_h` where `S_h` is the
/// realized standard deviation of `y` within stratum `h`, rounded by largest
/// remainder to preserve the total, then clamped to `[2, N_h]` with iterative
/// redistribution.
pub fn neyman_allocate(frame: &StratifiedFrame, y: &[f64], n_total: usize) -> Result<AllocationPlan> {
    let h = frame.n_strata();
    if h == 0 {
        return Err(Error::domain("allocation needs at least one stratum"));
    }
    if y.len() != frame.n_pop() {
        return Err(Error::DimensionMismatch {
            expected: frame.n_pop(),
            got: y.len(),
        });
    }
    let sizes = frame.sizes();
    if sizes.iter().any(|&s| s < 2) {
        return Err(Error::domain("every stratum needs at least 2 units"));
    }
    let lo = 2usize;
    if n_total < lo * h || n_total > frame.n_pop() {
        return Err(Error::domain(format!(
            "total sample size {n_total} is infeasible for {h} strata of sizes {sizes:?}"
        )));
    }

    // N_h * S_h targets (sample SD within stratum)
    let mut scores = Vec::with_capacity(h);
    for s in &frame.strata {
        let vals: Vec<f64> = s.iter().map(|&i| y[i]).collect();
        let (_, var) = crate::numeric::mean_and_sample_variance(&vals);
        scores.push(s.len() as f64 * var.sqrt());
    }

    let mut fixed = vec![None::<usize>; h];
    loop {
        let free: Vec<usize> = (0..h).filter(|&i| fixed[i].is_none()).collect();
        let fixed_total: usize = fixed.iter().flatten().sum();
        let remaining = n_total - fixed_total;
        if free.is_empty() {
            break;
        }
        let score_total: f64 = free.iter().map(|&i| scores[i]).sum();
        // proportional targets over the free strata; uniform if all scores vanish
        let targets: Vec<f64> = free
            .iter()
            .map(|&i| {
                if score_total > 0.0 {
                    remaining as f64 * scores[i] / score_total
                } else {
                    remaining as f64 / free.len() as f64
                }
            })
            .collect();
        let rounded = largest_remainder(&targets, remaining);
        let mut violated = false;
        for (k, &i) in free.iter().enumerate() {
            if rounded[k] < lo {
                fixed[i] = Some(lo);
                violated = true;
            } else if rounded[k] > sizes[i] {
                fixed[i] = Some(sizes[i]);
                violated = true;
            }
        }
        if !violated {
            for (k, &i) in free.iter().enumerate() {
                fixed[i] = Some(rounded[k]);
            }
            break;
        }
        let bound_total: usize = fixed.iter().flatten().sum();
        if bound_total > n_total {
            return Err(Error::domain(
                "allocation infeasible: minimum per-stratum sizes exceed the total",
            ));
        }
    }
    let sizes_out: Vec<usize> = fixed.into_iter().map(|v| v.unwrap()).collect();
    debug_assert_eq!(sizes_out.iter().sum::<usize>(), n_total);
    Ok(AllocationPlan { sizes: sizes_out })
}

/// Largest-remainder rounding of nonnegative `targets` to integers summing to
/// `total`. Ties broken by lower index.
fn largest_remainder(targets: &[f64], total: usize) -> Vec<usize> {
    let mut floors: Vec<usize> = targets.iter().map(|&t| t.max(0.0).floor() as usize).collect();
    let mut assigned: usize = floors.iter().sum();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < total {
        floors[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    while assigned > total {
        let i = order[order.len() - 1 - (k % order.len())];
        if floors[i] > 0 {
            floors[i] -= 1;
            assigned -= 1;
        }
        k += 1;
    }
    floors
}

/// One stratum's realized draw.
#[derive(Debug, Clone)]
pub struct StratumDraw {
    /// Sampled unit indices.
    pub members: Vec<usize>,
    /// Frame size actually sampled from (stratum minus exclusions).
    pub frame_size: usize,
    /// Full stratum size including exclusions.
    pub stratum_size: usize,
}

/// A realized stratified SRSWOR sample.
#[derive(Debug, Clone)]
pub struct StratifiedSample {
    pub draws: Vec<StratumDraw>,
    pub membership: MembershipRealization,
}

impl StratifiedSample {
    pub fn sampled(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.draws.iter().flat_map(|d| d.members.iter().copied()).collect();
        all.sort_unstable();
        all
    }
}

/// Independent SRSWOR of `plan.sizes[h]` units within each stratum. With
/// `exclude` set, sampling happens on the stratum minus the excluded units
/// (the excluded set behaves as a completely enumerated stratum: `pi = 1`,
/// never drawn). Inclusion probabilities use the post-exclusion frame sizes.
pub fn stratified_srswor(
    frame: &StratifiedFrame,
    plan: &AllocationPlan,
    rng: &mut impl Rng,
    exclude: Option<&[bool]>,
) -> Result<StratifiedSample> {
    if plan.sizes.len() != frame.n_strata() {
        return Err(Error::DimensionMismatch {
            expected: frame.n_strata(),
            got: plan.sizes.len(),
        });
    }
    let n_pop = frame.n_pop();
    let mut alpha = vec![false; n_pop];
    let mut pi = vec![1.0; n_pop];
    let mut stratum_of = vec![0u32; n_pop];
    let mut enumerated = vec![false; n_pop];
    if let Some(ex) = exclude {
        assert_eq!(ex.len(), n_pop);
        enumerated.copy_from_slice(ex);
    }
    let mut draw_n = Vec::with_capacity(frame.n_strata());
    let mut draw_frame = Vec::with_capacity(frame.n_strata());
    let mut draws = Vec::with_capacity(frame.n_strata());

    for (h, stratum) in frame.strata.iter().enumerate() {
        for &i in stratum {
            stratum_of[i] = h as u32;
        }
        let eligible: Vec<usize> = stratum
            .iter()
            .copied()
            .filter(|&i| !enumerated[i])
            .collect();
        let n_h = plan.sizes[h];
        if n_h > eligible.len() {
            return Err(Error::domain(format!(
                "stratum {h} exhausted: requested {n_h} of {} eligible units",
                eligible.len()
            )));
        }
        let picks = srswor(eligible.len(), n_h, rng)?;
        let members: Vec<usize> = picks.iter().map(|&k| eligible[k]).collect();
        let p = n_h as f64 / eligible.len() as f64;
        for &i in &eligible {
            pi[i] = p;
        }
        for &i in &members {
            alpha[i] = true;
        }
        draw_n.push(n_h);
        draw_frame.push(eligible.len());
        draws.push(StratumDraw {
            members,
            frame_size: eligible.len(),
            stratum_size: stratum.len(),
        });
    }
    let membership = MembershipRealization::new(
        alpha,
        pi,
        Pairwise::StratifiedSrswor {
            stratum_of,
            draw_n,
            draw_frame,
            enumerated,
        },
    )?;
    Ok(StratifiedSample { draws, membership })
}

/// Draws the big-data membership flags: a without-replacement sample of
/// `target_size` units where low values (below the threshold) enter at
/// `low_rate` relative to high ones. Realized by exponential-key weighted
/// reservoir selection. Only the flags are returned; the selection rates are
/// not exposed to any estimator.
pub fn bigdata_select(values: &[f64], mech: &BigDataMechanism, rng: &mut impl Rng) -> Result<Vec<bool>> {
    let n = values.len();
    if mech.target_size > n {
        return Err(Error::domain(format!(
            "big-data target {} exceeds the population size {n}",
            mech.target_size
        )));
    }
    if !(mech.low_rate > 0.0 && mech.low_rate <= 1.0) {
        return Err(Error::domain("low-rate must lie in (0, 1]"));
    }
    // Exponential sort: unit i gets key Exp(1) / w_i; the target_size
    // smallest keys form the sample, reproducing successive weighted draws
    // without replacement.
    let mut keys: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let w = if values[i] >= mech.threshold { 1.0 } else { mech.low_rate };
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (-u.ln() / w, i)
        })
        .collect();
    keys.select_nth_unstable_by(mech.target_size.max(1) - 1, |a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut delta = vec![false; n];
    for &(_, i) in keys.iter().take(mech.target_size) {
        delta[i] = true;
    }
    Ok(delta)
}

/// Design-variance ratio of surveying only the non-big-data units against
/// sampling from the entire population when the big data is treated as a
/// completely enumerated stratum: `(F2^2 - f) / (1 - f)`.
pub fn enumerated_stratum_ratio(f2: f64, f: f64) -> Result<f64> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::domain(format!("total sampling fraction f = {f} must lie in (0, 1)")));
    }
    if !(f2 > 0.0 && f2 <= 1.0) {
        return Err(Error::domain(format!("non-big-data fraction F2 = {f2} must lie in (0, 1]")));
    }
    if f > f2 * f2 {
        return Err(Error::domain(format!(
            "ratio undefined: f = {f} exceeds F2^2 = {}",
            f2 * f2
        )));
    }
    Ok((f2 * f2 - f) / (1.0 - f))
}

/// Result of [`allocate_optimal`].
#[derive(Debug, Clone)]
pub struct OptimalAllocation {
    pub fractions: Vec<f64>,
    pub objective: f64,
}

/// Minimises `variance_fn(f_1..f_H)` over the simplex
/// `{sum f_h = f_total, lo_h <= f_h <= hi_h}` by derivative-free pairwise
/// coordinate descent (golden-section on mass transfers) from several starts.
pub fn allocate_optimal(
    variance_fn: impl Fn(&[f64]) -> f64,
    f_total: f64,
    bounds: &[(f64, f64)],
) -> Result<OptimalAllocation> {
    let h = bounds.len();
    if h == 0 {
        return Err(Error::domain("allocation needs at least one stratum"));
    }
    let lo_sum: f64 = bounds.iter().map(|b| b.0).sum();
    let hi_sum: f64 = bounds.iter().map(|b| b.1).sum();
    if bounds.iter().any(|&(lo, hi)| lo < 0.0 || hi > 1.0 + 1e-12 || lo > hi) {
        return Err(Error::domain("bounds must satisfy 0 <= lo <= hi <= 1"));
    }
    if f_total < lo_sum - 1e-12 || f_total > hi_sum + 1e-12 {
        return Err(Error::domain(format!(
            "total fraction {f_total} is outside the feasible range [{lo_sum}, {hi_sum}]"
        )));
    }

    let project = |mut f: Vec<f64>| -> Vec<f64> {
        // clamp then spread the residual over unconstrained coordinates
        for (fi, &(lo, hi)) in f.iter_mut().zip(bounds) {
            *fi = fi.clamp(lo, hi);
        }
        for _ in 0..64 {
            let excess = f.iter().sum::<f64>() - f_total;
            if excess.abs() < 1e-15 {
                break;
            }
            let movable: Vec<usize> = (0..h)
                .filter(|&i| {
                    if excess > 0.0 {
                        f[i] > bounds[i].0 + 1e-15
                    } else {
                        f[i] < bounds[i].1 - 1e-15
                    }
                })
                .collect();
            if movable.is_empty() {
                break;
            }
            let share = excess / movable.len() as f64;
            for &i in &movable {
                f[i] = (f[i] - share).clamp(bounds[i].0, bounds[i].1);
            }
        }
        f
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(project(vec![f_total / h as f64; h]));
    for k in 0..h {
        let mut corner = vec![0.0; h];
        corner[k] = f_total;
        starts.push(project(corner));
    }

    let golden = |f: &mut Vec<f64>, i: usize, j: usize, eval: &dyn Fn(&[f64]) -> f64| -> bool {
        // transfer t from j to i; t in [t_lo, t_hi]
        let t_lo = (bounds[i].0 - f[i]).max(f[j] - bounds[j].1);
        let t_hi = (bounds[i].1 - f[i]).min(f[j] - bounds[j].0);
        if t_hi - t_lo < 1e-9 {
            return false;
        }
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut a = t_lo;
        let mut b = t_hi;
        let value_at = |t: f64, f: &[f64]| {
            let mut cand = f.to_vec();
            cand[i] += t;
            cand[j] -= t;
            eval(&cand)
        };
        let mut x1 = b - phi * (b - a);
        let mut x2 = a + phi * (b - a);
        let mut v1 = value_at(x1, f);
        let mut v2 = value_at(x2, f);
        while b - a > 1e-7 {
            if v1 <= v2 {
                b = x2;
                x2 = x1;
                v2 = v1;
                x1 = b - phi * (b - a);
                v1 = value_at(x1, f);
            } else {
                a = x1;
                x1 = x2;
                v1 = v2;
                x2 = a + phi * (b - a);
                v2 = value_at(x2, f);
            }
        }
        let t = 0.5 * (a + b);
        let before = eval(f);
        let after = value_at(t, f);
        if after < before - 1e-15 && t.abs() > 1e-12 {
            f[i] += t;
            f[j] -= t;
            true
        } else {
            false
        }
    };

    let eval = |f: &[f64]| variance_fn(f);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let mut f = start;
        for _sweep in 0..200 {
            let mut moved = false;
            for i in 0..h {
                for j in (i + 1)..h {
                    moved |= golden(&mut f, i, j, &eval);
                }
            }
            if !moved {
                break;
            }
        }
        let v = eval(&f);
        match &best {
            Some((_, bv)) if *bv <= v => {}
            _ => best = Some((f, v)),
        }
    }
    let (fractions, objective) = best.unwrap();
    Ok(OptimalAllocation { fractions, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn srswor_edges() {
        let mut rng = stream(1, 0, "srswor");
        assert_eq!(srswor(4, 4, &mut rng).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(srswor(4, 0, &mut rng).unwrap(), Vec::<usize>::new());
        assert!(srswor(4, 5, &mut rng).is_err());
    }

    #[test]
    fn srswor_inclusion_frequencies() {
        let mut rng = stream(2, 0, "srswor-freq");
        let n_pop = 6;
        let n = 3;
        let reps = 100_000;
        let mut counts = vec![0usize; n_pop];
        for _ in 0..reps {
            for i in srswor(n_pop, n, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / reps as f64;
            assert!((freq - 0.5).abs() < 0.005, "freq = {freq}");
        }
    }

    #[test]
    fn srswor_is_reproducible() {
        let a = srswor(100, 10, &mut stream(9, 4, "x")).unwrap();
        let b = srswor(100, 10, &mut stream(9, 4, "x")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn neyman_examples() {
        // N_h = (100, 100), S = (1, 3), n = 8 -> (2, 6)
        let mut y = Vec::new();
        let mut labels = Vec::new();
        let mut rng = stream(3, 0, "neyman");
        for _ in 0..100 {
            y.push(rng.random::<f64>() - 0.5);
            labels.push(0u32);
        }
        for _ in 0..100 {
            y.push(3.0 * (rng.random::<f64>() - 0.5));
            labels.push(1u32);
        }
        // force the exact SDs by standardising each stratum
        let frame = StratifiedFrame::from_labels(&labels);
        for h in 0..2 {
            let idx: Vec<usize> = frame.stratum(h).to_vec();
            let vals: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let (m, v) = crate::numeric::mean_and_sample_variance(&vals);
            let target_sd = if h == 0 { 1.0 } else { 3.0 };
            for &i in &idx {
                y[i] = (y[i] - m) / v.sqrt() * target_sd;
            }
        }
        let plan = neyman_allocate(&frame, &y, 8).unwrap();
        assert_eq!(plan.sizes, vec![2, 6]);
        assert_eq!(plan.total(), 8);
    }

    #[test]
    fn neyman_proportional_under_equal_dispersion() {
        let mut y = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            y.push((i % 10) as f64);
            labels.push(0u32);
        }
        for i in 0..30 {
            y.push((i % 10) as f64);
            labels.push(1u32);
        }
        let frame = StratifiedFrame::from_labels(&labels);
        let plan = neyman_allocate(&frame, &y, 9).unwrap();
        assert_eq!(plan.sizes, vec![6, 3]);
    }

    #[test]
    fn neyman_single_stratum_takes_everything() {
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let frame = StratifiedFrame::from_labels(&vec![0u32; 20]);
        let plan = neyman_allocate(&frame, &y, 7).unwrap();
        assert_eq!(plan.sizes, vec![7]);
    }

    #[test]
    fn neyman_rejects_infeasible_totals() {
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let frame = StratifiedFrame::from_labels(&labels);
        assert!(neyman_allocate(&frame, &y, 3).is_err()); // below 2 per stratum
        assert!(neyman_allocate(&frame, &y, 9).is_err()); // above N
    }

    #[test]
    fn stratified_srswor_without_exclusion_reduces_to_per_stratum_srswor() {
        let labels = vec![0u32, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let frame = StratifiedFrame::from_labels(&labels);
        let plan = AllocationPlan { sizes: vec![2, 3] };
        let mut rng = stream(7, 0, "strat");
        let s = stratified_srswor(&frame, &plan, &mut rng, None).unwrap();
        assert_eq!(s.draws[0].members.len(), 2);
        assert_eq!(s.draws[1].members.len(), 3);
        assert!(s.draws[0].members.iter().all(|&i| i < 4));
        assert!(s.draws[1].members.iter().all(|&i| i >= 4));
        for &i in &s.sampled() {
            assert!(s.membership.alpha(i));
        }
        // pi on the un-excluded frame
        assert_relative_eq!(s.membership.pi(0), 0.5);
        assert_relative_eq!(s.membership.pi(5), 0.5);
    }

    #[test]
    fn stratified_srswor_exclusion_is_deterministic_when_forced() {
        let labels = vec![0u32, 0, 0, 1, 1, 1];
        let frame = StratifiedFrame::from_labels(&labels);
        let plan = AllocationPlan { sizes: vec![1, 1] };
        // exclude everything except one unit per stratum
        let exclude = vec![false, true, true, true, false, true];
        let mut rng = stream(8, 0, "forced");
        let s = stratified_srswor(&frame, &plan, &mut rng, Some(&exclude)).unwrap();
        assert_eq!(s.sampled(), vec![0, 4]);
        assert_relative_eq!(s.membership.pi(0), 1.0);
        // excluded units are enumerated: certain, never drawn
        assert!(!s.membership.alpha(1));
        assert_relative_eq!(s.membership.pi(1), 1.0);
    }

    #[test]
    fn stratified_srswor_exclusion_frequencies() {
        let labels: Vec<u32> = (0..40).map(|i| if i < 24 { 0 } else { 1 }).collect();
        let frame = StratifiedFrame::from_labels(&labels);
        let plan = AllocationPlan { sizes: vec![4, 4] };
        // exclude 8 units of stratum 0 and 4 of stratum 1
        let exclude: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let excluded0 = (0..24).filter(|i| i % 3 == 0).count();
        let excluded1 = (24..40).filter(|i| i % 3 == 0).count();
        let frame0 = 24 - excluded0;
        let frame1 = 16 - excluded1;
        let reps = 100_000;
        let mut counts = vec![0usize; 40];
        let mut rng = stream(10, 0, "strat-freq");
        for _ in 0..reps {
            let s = stratified_srswor(&frame, &plan, &mut rng, Some(&exclude)).unwrap();
            for i in s.sampled() {
                counts[i] += 1;
            }
        }
        for i in 0..40 {
            let freq = counts[i] as f64 / reps as f64;
            if exclude[i] {
                assert_eq!(counts[i], 0);
            } else if i < 24 {
                assert!((freq - 4.0 / frame0 as f64).abs() < 0.005, "unit {i}: {freq}");
            } else {
                assert!((freq - 4.0 / frame1 as f64).abs() < 0.005, "unit {i}: {freq}");
            }
        }
    }

    #[test]
    fn stratum_exhaustion_is_an_error() {
        let labels = vec![0u32, 0, 0];
        let frame = StratifiedFrame::from_labels(&labels);
        let plan = AllocationPlan { sizes: vec![2] };
        let exclude = vec![true, true, false];
        let mut rng = stream(11, 0, "exhaust");
        assert!(stratified_srswor(&frame, &plan, &mut rng, Some(&exclude)).is_err());
    }

    #[test]
    fn bigdata_select_single_draw_rates() {
        // |H| = 3, |L| = 4: P(specific high) = 0.3125, P(specific low) = 0.015625
        let values = vec![20.0, 20.0, 20.0, 1.0, 1.0, 1.0, 1.0];
        let mech = BigDataMechanism {
            threshold: 10.0,
            low_rate: 0.05,
            target_size: 1,
        };
        let mut rng = stream(12, 0, "bigdata-single");
        let reps = 200_000;
        let mut counts = vec![0usize; values.len()];
        for _ in 0..reps {
            let delta = bigdata_select(&values, &mech, &mut rng).unwrap();
            for (i, d) in delta.iter().enumerate() {
                if *d {
                    counts[i] += 1;
                }
            }
        }
        for i in 0..3 {
            let freq = counts[i] as f64 / reps as f64;
            assert!((freq - 0.3125).abs() < 0.005, "high unit {i}: {freq}");
        }
        for i in 3..7 {
            let freq = counts[i] as f64 / reps as f64;
            assert!((freq - 0.015625).abs() < 0.002, "low unit {i}: {freq}");
        }
    }

    #[test]
    fn bigdata_select_trivial_cases() {
        let values = vec![5.0, 6.0, 7.0, 8.0];
        // threshold below the minimum: uniform selection, correct size
        let mech = BigDataMechanism {
            threshold: 0.0,
            low_rate: 0.05,
            target_size: 2,
        };
        let mut rng = stream(13, 0, "bigdata-uniform");
        let delta = bigdata_select(&values, &mech, &mut rng).unwrap();
        assert_eq!(delta.iter().filter(|&&d| d).count(), 2);
        // target too large
        let mech = BigDataMechanism {
            threshold: 0.0,
            low_rate: 1.0,
            target_size: 5,
        };
        assert!(bigdata_select(&values, &mech, &mut rng).is_err());
    }

    #[test]
    fn bigdata_select_overrepresents_high_values() {
        let mut rng = stream(14, 0, "bigdata-sign");
        let n = 400;
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mech = BigDataMechanism {
            threshold: 300.0,
            low_rate: 0.05,
            target_size: 120,
        };
        let mut high_share_sum = 0.0;
        let reps = 10_000;
        for _ in 0..reps {
            let delta = bigdata_select(&values, &mech, &mut rng).unwrap();
            let high_in_b = (300..400).filter(|&i| delta[i]).count();
            high_share_sum += high_in_b as f64 / 120.0;
        }
        // population high share is 0.25; the mechanism must exceed it
        assert!(high_share_sum / reps as f64 > 0.25);
    }

    #[test]
    fn enumerated_ratio_examples() {
        assert_relative_eq!(enumerated_stratum_ratio(1.0, 0.3).unwrap(), 1.0);
        assert_relative_eq!(enumerated_stratum_ratio(0.8, 0.1).unwrap(), 0.6, epsilon = 1e-15);
        let near = enumerated_stratum_ratio(0.8, 0.64 - 1e-9).unwrap();
        assert!(near.abs() < 1e-8);
        assert!(enumerated_stratum_ratio(0.8, 0.7).is_err());
        assert!(enumerated_stratum_ratio(0.8, 0.0).is_err());
    }

    /// Stratified-SRSWOR mean variance in fraction space, used as the
    /// optimisation objective in the allocation tests.
    fn stratified_variance(fracs: &[f64], shares: &[f64], sds: &[f64]) -> f64 {
        fracs
            .iter()
            .zip(shares)
            .zip(sds)
            .map(|((&f, &share), &sd)| {
                if f <= 0.0 {
                    return f64::INFINITY;
                }
                share * (1.0 - f) / f * sd * sd
            })
            .sum()
    }

    #[test]
    fn allocate_optimal_symmetric_case() {
        let shares = [0.5, 0.5];
        let sds = [2.0, 2.0];
        let out = allocate_optimal(
            |f| stratified_variance(f, &shares, &sds),
            0.2,
            &[(0.01, 1.0), (0.01, 1.0)],
        )
        .unwrap();
        assert_relative_eq!(out.fractions[0], 0.1, epsilon = 1e-4);
        assert_relative_eq!(out.fractions[1], 0.1, epsilon = 1e-4);
    }

    #[test]
    fn allocate_optimal_matches_grid_search() {
        let shares = [0.6, 0.4];
        let sds = [1.0, 3.0];
        let f_total = 0.3;
        let bounds = [(0.01, 1.0), (0.01, 1.0)];
        let obj = |f: &[f64]| stratified_variance(f, &shares, &sds);
        let out = allocate_optimal(obj, f_total, &bounds).unwrap();

        let mut best = (0.0, f64::INFINITY);
        let mut g = 0.01;
        while g <= f_total - 0.01 {
            let v = obj(&[g, f_total - g]);
            if v < best.1 {
                best = (g, v);
            }
            g += 1e-3;
        }
        assert!((out.fractions[0] - best.0).abs() <= 2e-3, "{} vs {}", out.fractions[0], best.0);
        assert!(out.objective <= best.1 + 1e-9);
    }

    #[test]
    fn allocate_optimal_zero_dispersion_gets_bound_minimum() {
        let shares = [0.5, 0.5];
        let sds = [0.0, 2.0];
        let bounds = [(0.02, 1.0), (0.02, 1.0)];
        let out = allocate_optimal(
            |f| stratified_variance(f, &shares, &sds),
            0.3,
            &bounds,
        )
        .unwrap();
        assert_relative_eq!(out.fractions[0], 0.02, epsilon = 1e-5);
        assert_relative_eq!(out.fractions[1], 0.28, epsilon = 1e-5);
    }

    #[test]
    fn allocate_optimal_rejects_infeasible() {
        assert!(allocate_optimal(|_| 0.0, 0.5, &[(0.6, 1.0), (0.6, 1.0)]).is_err());
        assert!(allocate_optimal(|_| 0.0, 3.0, &[(0.0, 1.0), (0.0, 1.0)]).is_err());
    }
}

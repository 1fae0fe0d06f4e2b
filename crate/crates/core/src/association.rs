//! Measurement-to-target association: validation gating and enumeration of
//! the joint association hypotheses on the hypothesis tree.
//!
//! A hypothesis assigns each of the `L` targets either a measurement index or
//! nothing (missed detection). Measurements left unassigned are clutter.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::detection::{Detection, DETECTION_DIM};
use crate::error::{Error, Result};
use crate::unscented::MeasStats;

/// Largest measurement count supported by the bitmask traversal.
pub const MAX_MEASUREMENTS: usize = 64;

/// Largest size accepted by [`brute_force_hypotheses`].
pub const BRUTE_FORCE_LIMIT: usize = 6;

/// Quantile of the chi-squared distribution with `dof` degrees of freedom.
pub fn chi2_inv(p: f64, dof: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParam(format!("probability must be in (0, 1), got {p}")));
    }
    if dof == 0 {
        return Err(Error::InvalidParam("degrees of freedom must be positive".into()));
    }
    let k = dof as f64 / 2.0;
    let cdf = |x: f64| gamma_lr(k, x / 2.0);
    let log_norm = k * 2f64.ln() + ln_gamma(k);
    let pdf = |x: f64| ((k - 1.0) * x.ln() - x / 2.0 - log_norm).exp();

    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f.abs() < 1e-15 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = f / pdf(x);
        let newton = x - step;
        x = if step.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateParams {
    /// Gate probability `P_G`.
    pub p_g: f64,
    /// Measurement dimension used for the threshold.
    pub dof: usize,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams { p_g: 0.99, dof: DETECTION_DIM }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_g > 0.0 && self.p_g < 1.0) {
            return Err(Error::InvalidParam("gate.p_g must be in (0,1)".into()));
        }
        if self.dof == 0 {
            return Err(Error::InvalidParam("gate.dof must be positive".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> Result<f64> {
        chi2_inv(self.p_g, self.dof)
    }
}

/// Which measurements fall inside each target's validation gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateMatrix {
    n_targets: usize,
    n_meas: usize,
    admissible: Vec<bool>,
}

impl GateMatrix {
    pub fn new(n_targets: usize, n_meas: usize, admissible: Vec<bool>) -> Result<Self> {
        if n_meas > MAX_MEASUREMENTS {
            return Err(Error::TooLarge(format!("{n_meas} measurements (max {MAX_MEASUREMENTS})")));
        }
        if admissible.len() != n_targets * n_meas {
            return Err(Error::Dimension { what: "gate table", expected: n_targets * n_meas, got: admissible.len() });
        }
        Ok(GateMatrix { n_targets, n_meas, admissible })
    }

    /// Every measurement admissible for every target (gating disabled).
    pub fn all(n_targets: usize, n_meas: usize) -> Result<Self> {
        GateMatrix::new(n_targets, n_meas, vec![true; n_targets * n_meas])
    }

    pub fn from_fn<F: Fn(usize, usize) -> bool>(n_targets: usize, n_meas: usize, f: F) -> Result<Self> {
        let admissible = (0..n_targets).flat_map(|j| (0..n_meas).map(move |m| (j, m))).map(|(j, m)| f(j, m)).collect();
        GateMatrix::new(n_targets, n_meas, admissible)
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn n_meas(&self) -> usize {
        self.n_meas
    }

    pub fn get(&self, target: usize, meas: usize) -> bool {
        self.admissible[target * self.n_meas + meas]
    }

    pub fn set(&mut self, target: usize, meas: usize, value: bool) {
        self.admissible[target * self.n_meas + meas] = value;
    }

    pub fn admissible_count(&self) -> usize {
        self.admissible.iter().filter(|a| **a).count()
    }

    fn options(&self, target: usize) -> Vec<Option<usize>> {
        std::iter::once(None)
            .chain((0..self.n_meas).filter(|&m| self.get(target, m)).map(Some))
            .collect()
    }
}

/// Squared Mahalanobis distance of `z` from `z_hat` under covariance `s`.
pub fn mahalanobis2(z: &Vector3<f64>, z_hat: &Vector3<f64>, s: &Matrix3<f64>) -> Option<f64> {
    let chol = s.cholesky()?;
    let d = z - z_hat;
    Some(d.dot(&chol.solve(&d)))
}

/// Validation gating. `stats` holds the stacked predicted detections of all
/// targets with the unscented covariance *without* detection noise; each
/// measurement's own covariance is added to the target block before testing.
pub fn gate(measurements: &[Detection], stats: &MeasStats, gp: &GateParams) -> Result<GateMatrix> {
    gp.validate()?;
    gate_with_threshold(measurements, stats, gp.threshold()?)
}

pub fn gate_with_threshold(measurements: &[Detection], stats: &MeasStats, gamma: f64) -> Result<GateMatrix> {
    let n_targets = target_count(stats)?;
    let mut gm = GateMatrix::new(n_targets, measurements.len(), vec![false; n_targets * measurements.len()])?;
    for j in 0..n_targets {
        let (z_hat, block) = target_block(stats, j);
        for (m, det) in measurements.iter().enumerate() {
            let d2 = mahalanobis2(&det.p_rel, &z_hat, &(block + det.r_meas)).ok_or(Error::SingularInnovation)?;
            gm.set(j, m, d2 <= gamma);
        }
    }
    Ok(gm)
}

pub(crate) fn target_count(stats: &MeasStats) -> Result<usize> {
    if !stats.dim().is_multiple_of(DETECTION_DIM) {
        return Err(Error::Dimension { what: "stacked detection statistics", expected: DETECTION_DIM, got: stats.dim() });
    }
    Ok(stats.dim() / DETECTION_DIM)
}

pub(crate) fn target_block(stats: &MeasStats, j: usize) -> (Vector3<f64>, Matrix3<f64>) {
    let o = DETECTION_DIM * j;
    (
        stats.z_hat.fixed_rows::<3>(o).into_owned(),
        stats.p_zz.fixed_view::<3, 3>(o, o).into_owned(),
    )
}

/// One joint association event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hypothesis {
    pub assignment: Vec<Option<usize>>,
}

impl Hypothesis {
    pub fn none(n_targets: usize) -> Self {
        Hypothesis { assignment: vec![None; n_targets] }
    }

    pub fn detected(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    /// `(target, measurement)` pairs of the detected targets in target order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment.iter().enumerate().filter_map(|(j, m)| m.map(|m| (j, m)))
    }

    pub fn is_valid(&self, gm: &GateMatrix) -> bool {
        if self.assignment.len() != gm.n_targets() {
            return false;
        }
        let mut used = 0u64;
        for (j, m) in self.pairs() {
            if m >= gm.n_meas() || !gm.get(j, m) || used & (1 << m) != 0 {
                return false;
            }
            used |= 1 << m;
        }
        true
    }
}

/// All valid hypotheses, by depth-first traversal of the hypothesis tree.
///
/// Level `j` of the tree holds target `j`'s options (missed detection first,
/// then admissible measurements in ascending order); a root-to-leaf path is a
/// hypothesis if no measurement repeats. Output is in lexicographic order.
pub fn enumerate_hypotheses(gm: &GateMatrix) -> Vec<Hypothesis> {
    let mut out = Vec::new();
    visit_hypotheses(gm, |a| {
        out.push(Hypothesis { assignment: a.to_vec() });
        true
    });
    out
}

/// Depth-first traversal calling `f` on every valid assignment; stops early
/// when `f` returns `false`.
pub fn visit_hypotheses<F>(gm: &GateMatrix, mut f: F)
where
    F: FnMut(&[Option<usize>]) -> bool,
{
    let depth_max = gm.n_targets();
    if depth_max == 0 {
        f(&[]);
        return;
    }
    let options: Vec<Vec<Option<usize>>> = (0..depth_max).map(|j| gm.options(j)).collect();
    let mut cursor = vec![0usize; depth_max];
    let mut current: Vec<Option<usize>> = vec![None; depth_max];
    let mut used = 0u64;
    let mut depth = 0;
    loop {
        if cursor[depth] >= options[depth].len() {
            if depth == 0 {
                return;
            }
            depth -= 1;
            if let Some(m) = current[depth] {
                used &= !(1u64 << m);
            }
            cursor[depth] += 1;
            continue;
        }
        let choice = options[depth][cursor[depth]];
        if let Some(m) = choice {
            if used & (1u64 << m) != 0 {
                cursor[depth] += 1;
                continue;
            }
            used |= 1u64 << m;
        }
        current[depth] = choice;
        if depth + 1 == depth_max {
            if !f(&current) {
                return;
            }
            if let Some(m) = choice {
                used &= !(1u64 << m);
            }
            cursor[depth] += 1;
        } else {
            depth += 1;
            cursor[depth] = 0;
        }
    }
}

/// Reference enumeration: every tuple over `{none, 0..M}` filtered by validity.
pub fn brute_force_hypotheses(gm: &GateMatrix) -> Result<Vec<Hypothesis>> {
    let (l, m) = (gm.n_targets(), gm.n_meas());
    if l > BRUTE_FORCE_LIMIT || m > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!("{l}x{m} exceeds brute-force limit {BRUTE_FORCE_LIMIT}")));
    }
    let base = m + 1;
    let total = base.pow(l as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut assignment = vec![None; l];
        for slot in assignment.iter_mut().rev() {
            let digit = c % base;
            c /= base;
            *slot = if digit == 0 { None } else { Some(digit - 1) };
        }
        let h = Hypothesis { assignment };
        if h.is_valid(gm) {
            out.push(h);
        }
    }
    out.sort();
    Ok(out)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of hypotheses when every measurement is admissible for every
/// target: `Σ_D C(L,D)·C(M,D)·D!`.
pub fn count_hypotheses(n_targets: usize, n_meas: usize) -> u128 {
    (0..=n_targets.min(n_meas))
        .map(|d| binomial(n_targets, d) * binomial(n_meas, d) * (1..=d as u128).product::<u128>())
        .sum()
}

/// Additive log-scores for single target-to-measurement decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentScores {
    n_meas: usize,
    missed: Vec<f64>,
    detected: Vec<f64>,
}

impl AssignmentScores {
    pub fn new(missed: Vec<f64>, detected: Vec<f64>) -> Result<Self> {
        let l = missed.len();
        if l == 0 {
            return Ok(AssignmentScores { n_meas: 0, missed, detected });
        }
        if !detected.len().is_multiple_of(l) {
            return Err(Error::Dimension { what: "detection scores", expected: l, got: detected.len() });
        }
        Ok(AssignmentScores { n_meas: detected.len() / l, missed, detected })
    }

    pub fn score(&self, target: usize, choice: Option<usize>) -> f64 {
        match choice {
            None => self.missed[target],
            Some(m) => self.detected[target * self.n_meas + m],
        }
    }

    pub fn total(&self, assignment: &[Option<usize>]) -> f64 {
        assignment.iter().enumerate().map(|(j, c)| self.score(j, *c)).sum()
    }
}

/// The `k` valid hypotheses with the highest total score (ties broken in
/// lexicographic order), found by branch-and-bound on the hypothesis tree.
pub fn k_best_hypotheses(gm: &GateMatrix, scores: &AssignmentScores, k: usize) -> Result<Vec<Hypothesis>> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    let l = gm.n_targets();
    if scores.missed.len() != l || (l > 0 && scores.n_meas != gm.n_meas()) {
        return Err(Error::Dimension { what: "score table", expected: l, got: scores.missed.len() });
    }
    if l == 0 {
        return Ok(vec![Hypothesis::none(0)]);
    }
    let options: Vec<Vec<Option<usize>>> = (0..l).map(|j| gm.options(j)).collect();
    let level_best: Vec<f64> = options
        .iter()
        .enumerate()
        .map(|(j, opts)| opts.iter().map(|c| scores.score(j, *c)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut suffix = vec![0.0; l + 1];
    for j in (0..l).rev() {
        suffix[j] = suffix[j + 1] + level_best[j];
    }

    let mut best: Vec<(f64, Vec<Option<usize>>)> = Vec::with_capacity(k + 1);
    let mut cursor = vec![0usize; l];
    let mut current: Vec<Option<usize>> = vec![None; l];
    let mut partial = vec![0.0; l + 1];
    let mut used = 0u64;
    let mut depth = 0;
    let prunable = |bound: f64, best: &Vec<(f64, Vec<Option<usize>>)>| {
        if best.len() < k {
            return false;
        }
        let floor = best[k - 1].0;
        if floor.is_finite() {
            bound < floor - 1e-12 * floor.abs().max(1.0)
        } else {
            bound < floor
        }
    };
    loop {
        if cursor[depth] >= options[depth].len() {
            if depth == 0 {
                break;
            }
            depth -= 1;
            if let Some(m) = current[depth] {
                used &= !(1u64 << m);
            }
            cursor[depth] += 1;
            continue;
        }
        let choice = options[depth][cursor[depth]];
        if let Some(m) = choice {
            if used & (1u64 << m) != 0 {
                cursor[depth] += 1;
                continue;
            }
        }
        let here = partial[depth] + scores.score(depth, choice);
        if prunable(here + suffix[depth + 1], &best) {
            cursor[depth] += 1;
            continue;
        }
        current[depth] = choice;
        if depth + 1 == l {
            let total = scores.total(&current);
            // Later visits are lexicographically larger, so they go after equal scores.
            let pos = best.iter().position(|(s, _)| total > *s).unwrap_or(best.len());
            if pos < k {
                best.insert(pos, (total, current.clone()));
                best.truncate(k);
            }
            cursor[depth] += 1;
        } else {
            if let Some(m) = choice {
                used |= 1u64 << m;
            }
            partial[depth + 1] = here;
            depth += 1;
            cursor[depth] = 0;
        }
    }
    Ok(best.into_iter().map(|(_, assignment)| Hypothesis { assignment }).collect())
}

/// Stacked measurement vector for a hypothesis: the assigned measurements in
/// target order.
pub fn stacked_measurements(h: &Hypothesis, measurements: &[Detection]) -> DVector<f64> {
    let mut z = DVector::zeros(DETECTION_DIM * h.detected());
    for (r, (_, m)) in h.pairs().enumerate() {
        z.fixed_rows_mut::<3>(DETECTION_DIM * r).copy_from(&measurements[m].p_rel);
    }
    z
}

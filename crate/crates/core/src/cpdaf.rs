//! Coupled probabilistic data association update for anonymous detections.
//!
//! One robot acts as the station and every other robot is a target. All
//! valid association hypotheses are weighted by their Gaussian likelihood,
//! clutter density and detection probabilities, and the joint state is moved
//! to the moments of the resulting Gaussian mixture.
//!
//! The mixture moments are accumulated in the stacked measurement space of
//! the station (`3L` for `L` targets). With `Φ` selecting the detected
//! targets of a hypothesis, `Sₕ = Φ P_zz Φᵀ + blockdiag(R)` and
//! `aₕ = Sₕ⁻¹ μₕ`:
//!
//! ```text
//! y = Σ β Φᵀ a            x⁺ = x + P_zxᵀ y
//! A = Σ β Φᵀ Sₕ⁻¹ Φ       P⁺ = P − P_zxᵀ (A − B + y yᵀ) P_zx
//! B = Σ β (Φᵀ a)(Φᵀ a)ᵀ
//! ```
//!
//! which equals `Σ β (P − Kₕ Sₕ Kₕᵀ)` plus the spread of the per-hypothesis
//! corrections `Kₕ μₕ`, with `Kₕ = (Φ P_zx)ᵀ Sₕ⁻¹`.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::association::{
    self, enumerate_hypotheses, k_best_hypotheses, mahalanobis2, target_block, visit_hypotheses,
    AssignmentScores, GateMatrix, GateParams, Hypothesis,
};
use crate::detection::{station_h, station_targets, Detection, DETECTION_DIM};
use crate::error::{Error, Result};
use crate::state::{angle_indices, SystemState};
use crate::unscented::{measurement_stats, relinearized_stats, MeasStats, UtParams};

/// Exponent applied to the clutter density in the hypothesis weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaExponent {
    /// `M − D`: one factor per measurement left as clutter.
    #[default]
    Clutter,
    /// `L − D`: one factor per missed target.
    MissedTargets,
}

/// Form of the hypothesis likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodForm {
    /// `exp(−½ μᵀS⁻¹μ) / √((2π)^{3D} det S)`.
    #[default]
    Gaussian,
    /// `exp(μᵀS⁻¹μ) / √((2π)^D det S)`, kept for comparison only.
    Unnormalized,
}

/// Alternative forms of the weight terms, for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormulaVariants {
    pub lambda_exponent: LambdaExponent,
    pub likelihood_sign: LikelihoodForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpdafParams {
    /// Detection probability per target.
    pub p_d: f64,
    /// Clutter spatial density, 1/m³.
    pub lambda_fp: f64,
    /// Surveillance volume, m³.
    pub volume: f64,
    /// Above this many valid hypotheses only the best ones (by the additive
    /// per-target approximation) are weighted. `None` disables the cap.
    pub hypothesis_cap: Option<usize>,
    /// Passes of the update. Every pass after the first relinearizes the
    /// detection model about the previous pass's posterior and redoes the
    /// update from the prior. 1 is the plain unscented update.
    pub iterations: usize,
    #[serde(skip)]
    pub compat: FormulaVariants,
}

impl Default for CpdafParams {
    fn default() -> Self {
        CpdafParams {
            p_d: 0.95,
            lambda_fp: 0.5 / sphere_volume(10.0),
            volume: sphere_volume(10.0),
            hypothesis_cap: Some(10_000),
            iterations: 1,
            compat: FormulaVariants::default(),
        }
    }
}

pub fn sphere_volume(radius: f64) -> f64 {
    4.0 / 3.0 * PI * radius.powi(3)
}

impl CpdafParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_d) {
            return Err(Error::InvalidParam("p_d must be in [0,1]".into()));
        }
        if !(self.lambda_fp >= 0.0 && self.lambda_fp.is_finite()) {
            return Err(Error::InvalidParam("lambda_fp must be finite and >= 0".into()));
        }
        if !(self.volume > 0.0 && self.volume.is_finite()) {
            return Err(Error::InvalidParam("volume must be positive".into()));
        }
        if self.hypothesis_cap == Some(0) {
            return Err(Error::InvalidParam("hypothesis_cap must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Expected clutter count per scan, `λV`.
    pub fn expected_clutter(&self) -> f64 {
        self.lambda_fp * self.volume
    }
}

/// `x · ln(v)` with the convention `0 · ln 0 = 0`.
fn xlogy(x: f64, v: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * v.ln()
    }
}

/// Block selector `Φ(φ)`: the detected targets, each expanded to its
/// three measurement rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorMatrix {
    pub targets: Vec<usize>,
    pub n_targets: usize,
}

impl SelectorMatrix {
    pub fn for_hypothesis(h: &Hypothesis) -> Self {
        SelectorMatrix { targets: h.pairs().map(|(j, _)| j).collect(), n_targets: h.assignment.len() }
    }

    /// Rows of the stacked measurement space picked by the selector.
    pub fn indices(&self) -> Vec<usize> {
        self.targets.iter().flat_map(|j| (DETECTION_DIM * j)..(DETECTION_DIM * (j + 1))).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let idx = self.indices();
        let mut m = DMatrix::zeros(idx.len(), DETECTION_DIM * self.n_targets);
        for (r, c) in idx.into_iter().enumerate() {
            m[(r, c)] = 1.0;
        }
        m
    }
}

/// Unnormalized log weight of one hypothesis with its innovation and
/// innovation covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisTerm {
    pub log_weight: f64,
    pub mu: DVector<f64>,
    pub s: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedHypothesis {
    pub hyp: Hypothesis,
    pub beta: f64,
    pub mu: DVector<f64>,
    pub s: DMatrix<f64>,
}

/// Innovation `μ = Ω z − Φ ĥ` and covariance `S = Φ P_zz Φᵀ + blockdiag(R)`
/// for a hypothesis. `stats.p_zz` must exclude detection noise.
fn innovation(h: &Hypothesis, measurements: &[Detection], stats: &MeasStats) -> (Vec<usize>, DVector<f64>, DMatrix<f64>) {
    let sel = SelectorMatrix::for_hypothesis(h).indices();
    let d = sel.len();
    let z = association::stacked_measurements(h, measurements);
    let mu = DVector::from_fn(d, |r, _| z[r] - stats.z_hat[sel[r]]);
    let mut s = DMatrix::from_fn(d, d, |r, c| stats.p_zz[(sel[r], sel[c])]);
    for (k, (_, m)) in h.pairs().enumerate() {
        let o = DETECTION_DIM * k;
        let mut block = s.fixed_view_mut::<3, 3>(o, o);
        block += measurements[m].r_meas;
    }
    (sel, mu, s)
}

fn prior_log_weight(h: &Hypothesis, n_meas: usize, params: &CpdafParams) -> f64 {
    let l = h.assignment.len() as f64;
    let d = h.detected() as f64;
    let clutter_exponent = match params.compat.lambda_exponent {
        LambdaExponent::Clutter => n_meas as f64 - d,
        LambdaExponent::MissedTargets => l - d,
    };
    xlogy(clutter_exponent, params.lambda_fp) + xlogy(d, params.p_d) + xlogy(l - d, 1.0 - params.p_d)
}

fn log_likelihood(quad: f64, log_det: f64, n_detected: usize, dim: usize, form: LikelihoodForm) -> f64 {
    match form {
        LikelihoodForm::Gaussian => -0.5 * quad - 0.5 * log_det - 0.5 * dim as f64 * (2.0 * PI).ln(),
        LikelihoodForm::Unnormalized => quad - 0.5 * log_det - 0.5 * n_detected as f64 * (2.0 * PI).ln(),
    }
}

/// Unnormalized hypothesis weight in log space.
pub fn hypothesis_weight(
    h: &Hypothesis,
    measurements: &[Detection],
    stats: &MeasStats,
    params: &CpdafParams,
) -> Result<HypothesisTerm> {
    let (_, mu, s) = innovation(h, measurements, stats);
    let mut log_weight = prior_log_weight(h, measurements.len(), params);
    if !mu.is_empty() {
        let chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
        let quad = mu.dot(&chol.solve(&mu));
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        log_weight += log_likelihood(quad, log_det, h.detected(), mu.len(), params.compat.likelihood_sign);
    }
    Ok(HypothesisTerm { log_weight, mu, s })
}

/// Normalizes log weights to probabilities with the log-sum-exp shift.
pub fn normalize_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights.iter().cloned().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let exps: Vec<f64> = log_weights.iter().map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() }).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Weights every hypothesis; hypotheses with a singular innovation
/// covariance are dropped. Returns the weighted set and the drop count.
pub fn weigh_hypotheses(
    hyps: &[Hypothesis],
    measurements: &[Detection],
    stats: &MeasStats,
    params: &CpdafParams,
) -> Result<(Vec<WeightedHypothesis>, usize)> {
    let mut kept = Vec::with_capacity(hyps.len());
    let mut dropped = 0;
    for h in hyps {
        match hypothesis_weight(h, measurements, stats, params) {
            Ok(t) => kept.push((h.clone(), t)),
            Err(Error::SingularInnovation) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let logs: Vec<f64> = kept.iter().map(|(_, t)| t.log_weight).collect();
    let betas = normalize_weights(&logs)?;
    let out = kept
        .into_iter()
        .zip(betas)
        .map(|((hyp, t), beta)| WeightedHypothesis { hyp, beta, mu: t.mu, s: t.s })
        .collect();
    Ok((out, dropped))
}

/// Diagnostics of one station update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub station: usize,
    pub n_measurements: usize,
    pub n_hypotheses: usize,
    /// Admissible target/measurement pairs after gating.
    pub n_admissible: usize,
    /// Hypotheses dropped for a singular innovation covariance.
    pub dropped: usize,
    /// The hypothesis count exceeded the cap and only the best were kept.
    pub capped: bool,
    /// No hypothesis had positive weight; the state was left unchanged.
    pub degenerate: bool,
    pub beta_sum: f64,
    pub elapsed_us: u64,
}

/// Stacked unscented statistics of all targets seen from `station`, without
/// detection noise.
pub fn station_stats(state: &SystemState, station: usize, ut: &UtParams) -> Result<MeasStats> {
    state.check_robot(station)?;
    let targets = station_targets(state.n_robots(), station);
    let m = DETECTION_DIM * targets.len();
    measurement_stats(
        &state.x,
        &state.p,
        |x| station_h(x.as_slice(), station, &targets),
        &DMatrix::zeros(m, m),
        &[],
        &angle_indices(state.n_robots()),
        ut,
    )
}

/// [`station_stats`] through the regression about `lin`, evaluated on the
/// prior `state`.
pub fn station_stats_about(state: &SystemState, lin: &SystemState, station: usize, ut: &UtParams) -> Result<MeasStats> {
    state.check_robot(station)?;
    let targets = station_targets(state.n_robots(), station);
    let m = DETECTION_DIM * targets.len();
    relinearized_stats(
        &state.x,
        &state.p,
        &lin.x,
        &lin.p,
        |x| station_h(x.as_slice(), station, &targets),
        &DMatrix::zeros(m, m),
        &[],
        &angle_indices(state.n_robots()),
        ut,
    )
}

fn additive_scores(measurements: &[Detection], stats: &MeasStats, params: &CpdafParams) -> Result<AssignmentScores> {
    let l = association::target_count(stats)?;
    let lam = params.lambda_fp.max(f64::MIN_POSITIVE);
    let missed = vec![(1.0 - params.p_d).ln(); l];
    let mut detected = Vec::with_capacity(l * measurements.len());
    for j in 0..l {
        let (z_hat, block) = target_block(stats, j);
        for det in measurements {
            let s = block + det.r_meas;
            let score = match (mahalanobis2(&det.p_rel, &z_hat, &s), s.determinant()) {
                (Some(q), det_s) if det_s > 0.0 => {
                    -0.5 * q - 0.5 * det_s.ln() - 1.5 * (2.0 * PI).ln() + params.p_d.ln() - lam.ln()
                }
                _ => f64::NEG_INFINITY,
            };
            detected.push(score);
        }
    }
    AssignmentScores::new(missed, detected)
}

/// Valid hypotheses for the gate, falling back to the `cap` best when there
/// are more than `cap` of them.
fn collect_hypotheses(
    gm: &GateMatrix,
    measurements: &[Detection],
    stats: &MeasStats,
    params: &CpdafParams,
) -> Result<(Vec<Hypothesis>, bool)> {
    let Some(cap) = params.hypothesis_cap else {
        return Ok((enumerate_hypotheses(gm), false));
    };
    let mut hyps = Vec::new();
    let mut overflow = false;
    visit_hypotheses(gm, |a| {
        if hyps.len() == cap {
            overflow = true;
            return false;
        }
        hyps.push(Hypothesis { assignment: a.to_vec() });
        true
    });
    if !overflow {
        return Ok((hyps, false));
    }
    let scores = additive_scores(measurements, stats, params)?;
    Ok((k_best_hypotheses(gm, &scores, cap)?, true))
}

/// Largest change of any state component between passes that ends the
/// iteration early.
const ITERATION_TOLERANCE: f64 = 1e-10;

/// One station update over all valid hypotheses. `gating = None` admits every
/// measurement for every target.
pub fn cpdaf_update(
    state: &SystemState,
    station: usize,
    measurements: &[Detection],
    params: &CpdafParams,
    gating: Option<&GateParams>,
    ut: &UtParams,
) -> Result<(SystemState, UpdateReport)> {
    let start = Instant::now();
    state.check_robot(station)?;
    params.validate()?;
    let mut report = UpdateReport { station, n_measurements: measurements.len(), ..Default::default() };
    let n_targets = state.n_robots() - 1;
    if measurements.is_empty() || n_targets == 0 {
        report.n_hypotheses = 1;
        report.beta_sum = 1.0;
        report.elapsed_us = start.elapsed().as_micros() as u64;
        return Ok((state.clone(), report));
    }

    // Gating and the hypothesis set come from the prior prediction; later
    // passes only refine the linearization.
    let stats = station_stats(state, station, ut)?;
    let gm = match gating {
        Some(gp) => association::gate(measurements, &stats, gp)?,
        None => GateMatrix::all(n_targets, measurements.len())?,
    };
    report.n_admissible = gm.admissible_count();
    let (hyps, capped) = collect_hypotheses(&gm, measurements, &stats, params)?;
    report.capped = capped;
    report.n_hypotheses = hyps.len();

    let mut current: Option<(SystemState, UpdateReport)> = None;
    for _ in 0..params.iterations {
        let mut pass = report.clone();
        let out = match &current {
            None => update_pass(state, station, measurements, &stats, &hyps, params, &mut pass)?,
            Some((lin, _)) => {
                let relin = station_stats_about(state, lin, station, ut)?;
                update_pass(state, station, measurements, &relin, &hyps, params, &mut pass)?
            }
        };
        match out {
            Some(out) => {
                let settled = current.as_ref().is_some_and(|(prev, _)| (&out.x - &prev.x).amax() < ITERATION_TOLERANCE);
                current = Some((out, pass));
                if settled {
                    break;
                }
            }
            None if current.is_none() => {
                report = pass;
                report.elapsed_us = start.elapsed().as_micros() as u64;
                return Ok((state.clone(), report));
            }
            // Keep the previous pass when a relinearized one degenerates.
            None => break,
        }
    }
    let (out, mut report) = current.expect("at least one pass");
    report.elapsed_us = start.elapsed().as_micros() as u64;
    Ok((out, report))
}

/// One update of `state` over a fixed hypothesis set with fixed measurement
/// statistics. `None` when no hypothesis carries weight.
fn update_pass(
    state: &SystemState,
    station: usize,
    measurements: &[Detection],
    stats: &MeasStats,
    hyps: &[Hypothesis],
    params: &CpdafParams,
    report: &mut UpdateReport,
) -> Result<Option<SystemState>> {
    let n_targets = state.n_robots() - 1;
    // First pass: log weights.
    let mut logs = Vec::with_capacity(hyps.len());
    for h in hyps {
        match hypothesis_weight(h, measurements, stats, params) {
            Ok(t) => logs.push(t.log_weight),
            Err(Error::SingularInnovation) => {
                report.dropped += 1;
                logs.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    let betas = match normalize_weights(&logs) {
        Ok(b) => b,
        Err(Error::DegenerateWeights) => {
            log::warn!("station {station}: no hypothesis with positive weight, skipping update");
            report.degenerate = true;
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    report.beta_sum = betas.iter().sum();

    // Second pass: mixture moments in measurement space.
    let m = DETECTION_DIM * n_targets;
    let mut y = DVector::zeros(m);
    let mut a_acc = DMatrix::zeros(m, m);
    let mut b_acc = DMatrix::zeros(m, m);
    for (h, &beta) in hyps.iter().zip(&betas) {
        if beta == 0.0 || h.detected() == 0 {
            continue;
        }
        let (sel, mu, s) = innovation(h, measurements, stats);
        let Some(chol) = s.cholesky() else { continue };
        let a = chol.solve(&mu);
        let s_inv = chol.inverse();
        for (r, &ir) in sel.iter().enumerate() {
            y[ir] += beta * a[r];
            for (c, &ic) in sel.iter().enumerate() {
                a_acc[(ir, ic)] += beta * s_inv[(r, c)];
                b_acc[(ir, ic)] += beta * a[r] * a[c];
            }
        }
    }
    let mut reduction = a_acc - b_acc;
    reduction.ger(1.0, &y, &y, 1.0);

    let x = &state.x + stats.p_zx.transpose() * &y;
    let p = &state.p - stats.p_zx.transpose() * reduction * &stats.p_zx;
    let mut out = SystemState::new(x, p)?;
    out.stabilize();
    Ok(Some(out))
}

/// Order in which robots take the station role during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    #[default]
    Forward,
    Reverse,
}

/// Sequential station updates, each starting from the previous posterior.
/// `detections[i]` holds the detections made by robot `i`.
pub fn station_sweep(
    state: &SystemState,
    detections: &[Vec<Detection>],
    params: &CpdafParams,
    gating: Option<&GateParams>,
    ut: &UtParams,
    order: SweepOrder,
) -> Result<(SystemState, Vec<UpdateReport>)> {
    let n = state.n_robots();
    if detections.len() != n {
        return Err(Error::Dimension { what: "detection sets", expected: n, got: detections.len() });
    }
    let stations: Vec<usize> = match order {
        SweepOrder::Forward => (0..n).collect(),
        SweepOrder::Reverse => (0..n).rev().collect(),
    };
    let mut current = state.clone();
    let mut reports = Vec::with_capacity(n);
    for i in stations {
        if detections[i].is_empty() {
            continue;
        }
        let (next, report) = cpdaf_update(&current, i, &detections[i], params, gating, ut)?;
        current = next;
        reports.push(report);
    }
    Ok((current, reports))
}

//! Acceptance suite. Each criterion prints one PASS/FAIL line to stderr
//! (uncaptured) and then asserts its result.

use std::io::Write as _;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cpdaf_core::association::{brute_force_hypotheses, count_hypotheses, enumerate_hypotheses, GateMatrix, GateParams};
use cpdaf_core::bench::{run_bench, BenchConfig};
use cpdaf_core::cpdaf::{cpdaf_update, station_sweep, CpdafParams, SweepOrder};
use cpdaf_core::detection::{detection_h, station_h, station_targets, Detection};
use cpdaf_core::geom::{Pose2z, Yaw};
use cpdaf_core::odometry::{odom_update, OdomMeasurement, OdomNoise};
use cpdaf_core::runlog::{errors_csv, RunLog, StepRecord, Summary};
use cpdaf_core::sim::formation::{FormationShape, FormationSpec};
use cpdaf_core::sim::scenario::{ControllerMode, PriorMean};
use cpdaf_core::sim::sensors::{gen_odometry, noisy_reading, SensorConfig};
use cpdaf_core::sim::truth::FrameDrift;
use cpdaf_core::sim::{run_scenario, GroundTruth, ScenarioConfig};
use cpdaf_core::state::{base, pinned_indices, RobotState, SystemState, PSI_FRAME, PSI_GLOBAL, ROBOT_DIM, T_LOCAL};
use cpdaf_core::unscented::UtParams;

const WEIGHT_SUM_TOL: f64 = 1e-9;
const ORACLE_TOL: f64 = 1e-9;
const RANDOM_4X4_GATES: usize = 500;
const UT_INSTANCES: usize = 100;
const SEEDS: u64 = 20;
const REQUIRED_SEEDS: usize = 18;
const CPDAF_GROWTH_LIMIT: f64 = 2.0;
const BOOTSTRAP_FRACTION: f64 = 0.1;
const FORMATION_THRESHOLD: f64 = 0.05;
const NOISE_SAMPLES: usize = 100_000;
const NOISE_REL_TOL: f64 = 0.03;

fn wrap(a: f64) -> f64 {
    let t = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if t <= -std::f64::consts::PI { t + std::f64::consts::TAU } else { t }
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} {verdict} {name}: {detail}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sorted(mut v: Vec<cpdaf_core::association::Hypothesis>) -> Vec<cpdaf_core::association::Hypothesis> {
    v.sort();
    v
}

fn gate_from_bits(l: usize, m: usize, bits: u64) -> GateMatrix {
    GateMatrix::new(l, m, (0..l * m).map(|k| bits >> k & 1 == 1).collect()).unwrap()
}

#[test]
fn c01_association_oracle_equivalence() {
    let start = std::time::Instant::now();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for l in 1..=3 {
        for m in 1..=3 {
            for bits in 0..1u64 << (l * m) {
                let gm = gate_from_bits(l, m, bits);
                checked += 1;
                if sorted(enumerate_hypotheses(&gm)) != brute_force_hypotheses(&gm).unwrap() {
                    mismatches += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for l in 1..=4 {
        for m in 1..=4 {
            if l < 4 && m < 4 {
                continue;
            }
            let draws = if l == 4 && m == 4 { RANDOM_4X4_GATES } else { 100 };
            for _ in 0..draws {
                let bits: u64 = rng.random::<u64>() & ((1 << (l * m)) - 1);
                let gm = gate_from_bits(l, m, bits);
                checked += 1;
                if sorted(enumerate_hypotheses(&gm)) != brute_force_hypotheses(&gm).unwrap() {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 10.0;
    report(1, "association oracle equivalence", pass, &format!("{checked} gates, {mismatches} mismatches, {secs:.2} s"));
    assert!(pass);
}

/// Counts injective partial maps from `l` targets into `m` measurements by
/// recursion over the first target.
fn count_by_recursion(l: usize, m: usize) -> u128 {
    if l == 0 {
        return 1;
    }
    count_by_recursion(l - 1, m) + if m > 0 { m as u128 * count_by_recursion(l - 1, m - 1) } else { 0 }
}

#[test]
fn c02_hypothesis_count() {
    let mut bad = Vec::new();
    for l in 0..=5 {
        for m in 0..=5 {
            let gm = GateMatrix::all(l, m).unwrap();
            let enumerated = enumerate_hypotheses(&gm).len() as u128;
            let brute = brute_force_hypotheses(&gm).unwrap().len() as u128;
            let c = count_hypotheses(l, m);
            if c != enumerated || c != brute || c != count_by_recursion(l, m) {
                bad.push((l, m));
            }
        }
    }
    let anchors = count_hypotheses(2, 2) == 7 && count_hypotheses(3, 3) == 34;
    let pass = bad.is_empty() && anchors;
    report(2, "hypothesis count", pass, &format!("36 sizes, mismatches {bad:?}, (2,2)={} (3,3)={}", count_hypotheses(2, 2), count_hypotheses(3, 3)));
    assert!(pass);
}

/// Unscented update written without the library's sigma-point or Kalman
/// code: Cholesky on the active block, standard weights with `n + λ = 3`,
/// one fixed assignment of detections to targets.
fn oracle_ukf(state: &SystemState, station: usize, assignment: &[(usize, usize)], dets: &[Detection]) -> (DVector<f64>, DMatrix<f64>) {
    let n = state.dim();
    let active: Vec<usize> = (0..n).filter(|&k| state.p[(k, k)] > 0.0).collect();
    let sub = DMatrix::from_fn(active.len(), active.len(), |r, c| state.p[(active[r], active[c])]);
    let l = sub.cholesky().unwrap().l();
    let targets = station_targets(state.n_robots(), station);
    let h = |x: &DVector<f64>| station_h(x.as_slice(), station, &targets);
    let lambda = 3.0 - n as f64;
    let (w0m, w0c, wi) = (lambda / 3.0, lambda / 3.0 + 2.0, 1.0 / 6.0);
    let mut pts = vec![state.x.clone()];
    for c in 0..active.len() {
        for sign in [1.0, -1.0] {
            let mut x = state.x.clone();
            for (r, &k) in active.iter().enumerate() {
                x[k] += sign * 3f64.sqrt() * l[(r, c)];
            }
            pts.push(x);
        }
    }
    let idle = 2.0 * (n - active.len()) as f64 * wi;
    let zs: Vec<DVector<f64>> = pts.iter().map(h).collect();
    let mut z_hat = &zs[0] * (w0m + idle);
    for z in &zs[1..] {
        z_hat += z * wi;
    }
    let m = z_hat.len();
    let d0 = &zs[0] - &z_hat;
    let mut p_zz = &d0 * d0.transpose() * (w0c + idle);
    let mut p_xz = DMatrix::zeros(n, m);
    for (z, x) in zs.iter().zip(&pts).skip(1) {
        let dz = z - &z_hat;
        p_zz += &dz * dz.transpose() * wi;
        p_xz += (x - &state.x) * dz.transpose() * wi;
    }
    let rows: Vec<usize> = assignment.iter().flat_map(|&(j, _)| 3 * j..3 * j + 3).collect();
    let d = rows.len();
    let mut s = DMatrix::from_fn(d, d, |r, c| p_zz[(rows[r], rows[c])]);
    let mut mu = DVector::zeros(d);
    for (k, &(_, meas)) in assignment.iter().enumerate() {
        for a in 0..3 {
            mu[3 * k + a] = dets[meas].p_rel[a] - z_hat[rows[3 * k + a]];
            for b in 0..3 {
                s[(3 * k + a, 3 * k + b)] += dets[meas].r_meas[(a, b)];
            }
        }
    }
    let pxz = DMatrix::from_fn(n, d, |r, c| p_xz[(r, rows[c])]);
    let k = &pxz * s.clone().try_inverse().unwrap();
    (&state.x + &k * mu, &state.p - &k * s * k.transpose())
}

fn angle_aware_max_diff(a: &DVector<f64>, b: &DVector<f64>, n_robots: usize) -> f64 {
    let angles: Vec<usize> = (0..n_robots).flat_map(|i| [base(i) + PSI_GLOBAL, base(i) + PSI_FRAME]).collect();
    (0..a.len())
        .map(|k| if angles.contains(&k) { wrap(a[k] - b[k]).abs() } else { (a[k] - b[k]).abs() })
        .fold(0.0, f64::max)
}

#[test]
fn c03_weight_normalization_and_single_hypothesis() {
    let cfg = ScenarioConfig { n_robots: 7, seed: 3, ..Default::default() };
    let log = run_scenario(&cfg).unwrap();
    let worst = log.rows.iter().map(|r| r.max_weight_error).fold(0.0, f64::max);
    let degenerate: usize = log.rows.iter().map(|r| r.degenerate).sum();
    let sum_ok = worst <= WEIGHT_SUM_TOL;

    // Three robots far apart with tight priors. Without misses or clutter
    // only full assignments carry weight, and the swapped one is negligible.
    let robots = [
        RobotState { psi_global: Yaw::new(0.2), ..Default::default() },
        RobotState {
            t_local: Vector3::new(0.5, 0.2, 0.1),
            psi_global: Yaw::new(-0.4),
            t_frame: Vector3::new(3.0, 0.5, 0.2),
            psi_frame: Yaw::new(0.3),
        },
        RobotState {
            t_local: Vector3::new(-0.3, 0.4, 0.0),
            psi_global: Yaw::new(1.1),
            t_frame: Vector3::new(-1.0, 4.0, -0.3),
            psi_frame: Yaw::new(-0.8),
        },
    ];
    let vars = [
        [0.01, 0.01, 0.01, 0.001, 0.0, 0.0, 0.0, 0.0],
        [0.01, 0.01, 0.01, 0.002, 0.02, 0.02, 0.01, 0.002],
        [0.01, 0.01, 0.01, 0.002, 0.02, 0.02, 0.01, 0.002],
    ];
    let state = SystemState::from_robots(&robots, &vars).unwrap();
    let r = Matrix3::from_diagonal(&Vector3::new(0.01, 0.02, 0.015));
    let dets = vec![
        Detection { observer: 0, p_rel: detection_h(&state, 0, 2).unwrap() + Vector3::new(0.05, -0.04, 0.02), r_meas: r },
        Detection { observer: 0, p_rel: detection_h(&state, 0, 1).unwrap() + Vector3::new(-0.03, 0.06, 0.0), r_meas: r },
    ];
    let params = CpdafParams { p_d: 1.0, lambda_fp: 0.0, ..Default::default() };
    let (post, rep) = cpdaf_update(&state, 0, &dets, &params, Some(&GateParams::default()), &UtParams::default()).unwrap();
    // Targets of station 0 are robots 1 and 2, in that order.
    let (x, p) = oracle_ukf(&state, 0, &[(0, 1), (1, 0)], &dets);
    let dx = angle_aware_max_diff(&post.x, &x, 3);
    let dp = (&post.p - &p).amax();
    let oracle_ok = dx <= ORACLE_TOL && dp <= ORACLE_TOL;

    let pass = sum_ok && oracle_ok;
    report(
        3,
        "weight normalization and single-hypothesis update",
        pass,
        &format!(
            "max |sum beta - 1| = {worst:.2e} over {} steps ({degenerate} degenerate); oracle hyps {} dx {dx:.2e} dP {dp:.2e}",
            log.rows.len(),
            rep.n_hypotheses
        ),
    );
    assert!(pass);
}

fn random_state(rng: &mut ChaCha8Rng) -> SystemState {
    let n_robots = rng.random_range(2..=4);
    let n = n_robots * ROBOT_DIM;
    let mut x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let pinned = pinned_indices();
    for k in 0..n_robots {
        x[base(k) + PSI_GLOBAL] = rng.random_range(-1.0..1.0);
        x[base(k) + PSI_FRAME] = rng.random_range(-1.0..1.0);
    }
    let active: Vec<usize> = (0..n).filter(|k| !pinned.contains(k)).collect();
    let a = DMatrix::from_fn(active.len(), active.len(), |_, _| rng.random_range(-0.1..0.1));
    let sub = &a * a.transpose() + DMatrix::identity(active.len(), active.len()) * 0.01;
    let mut p = DMatrix::zeros(n, n);
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            p[(i, j)] = sub[(r, c)];
        }
    }
    SystemState::new(x, p).unwrap()
}

#[test]
fn c04_linear_consistency_of_ut() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = OdomNoise::default();
    let mut worst = 0.0f64;
    for _ in 0..UT_INSTANCES {
        let state = random_state(&mut rng);
        let n = state.dim();
        let robot = rng.random_range(0..state.n_robots());
        let b = base(robot);
        let z = OdomMeasurement {
            robot,
            t_meas: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            psi_meas: Yaw::new(rng.random_range(-1.0..1.0)),
        };
        let post = odom_update(&state, &z, &noise, &UtParams::default()).unwrap();

        let mut h = DMatrix::zeros(4, n);
        for a in 0..3 {
            h[(a, b + T_LOCAL + a)] = 1.0;
        }
        h[(3, b + PSI_GLOBAL)] = 1.0;
        h[(3, b + PSI_FRAME)] = -1.0;
        let pred = &h * &state.x;
        let mut innov = DVector::from_vec(vec![z.t_meas.x, z.t_meas.y, z.t_meas.z, z.psi_meas.radians()]) - pred;
        innov[3] = wrap(innov[3]);
        let s = &h * &state.p * h.transpose() + noise.covariance();
        let k = &state.p * h.transpose() * s.try_inverse().unwrap();
        let x = &state.x + &k * innov;
        let p = (DMatrix::identity(n, n) - &k * &h) * &state.p;
        worst = worst.max(angle_aware_max_diff(&post.x, &x, state.n_robots())).max((&post.p - &p).amax());
    }
    let pass = worst <= ORACLE_TOL;
    report(4, "linear consistency of the unscented transform", pass, &format!("{UT_INSTANCES} instances, max deviation {worst:.2e}"));
    assert!(pass);
}

/// Mean of `f` over the rows with `t0 <= time < t1`.
fn window_mean(rows: &[StepRecord], t0: f64, t1: f64, f: impl Fn(&StepRecord) -> f64) -> f64 {
    let sel: Vec<f64> = rows.iter().filter(|r| r.time_s >= t0 - 1e-9 && r.time_s < t1 - 1e-9).map(f).collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

#[test]
fn c05_convergence_against_baseline() {
    let start = std::time::Instant::now();
    let runs: Vec<(f64, f64, f64, f64, f64, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = ScenarioConfig { n_robots: 7, seed, ..Default::default() };
            cfg.prior.mean = PriorMean::Truth;
            cfg.flags.enable_baseline = true;
            cfg.drift = FrameDrift { sigma_p: 0.01, sigma_psi: 0.001 };
            cfg.process_noise.sigma_drift_p = cfg.drift.sigma_p;
            cfg.process_noise.sigma_drift_psi = cfg.drift.sigma_psi;
            let log = run_scenario(&cfg).unwrap();
            let rows = &log.rows;
            let end = rows.last().unwrap().time_s;
            let c = |r: &StepRecord| r.e_rel_cpdaf;
            let b = |r: &StepRecord| r.e_rel_baseline.unwrap();
            (
                window_mean(rows, end / 2.0, end + 1.0, c),
                window_mean(rows, end / 2.0, end + 1.0, b),
                window_mean(rows, 9.5, 10.5, c),
                window_mean(rows, end - 1.0, end + 1.0, c),
                window_mean(rows, 9.5, 10.5, b),
                window_mean(rows, end - 1.0, end + 1.0, b),
            )
        })
        .collect();
    let col = |k: usize| median(runs.iter().map(|r| [r.0, r.1, r.2, r.3, r.4, r.5][k]).collect());
    let (ss_c, ss_b, c10, cend, b10, bend) = (col(0), col(1), col(2), col(3), col(4), col(5));
    let secs = start.elapsed().as_secs_f64();
    let pass = ss_c < ss_b && bend > b10 && cend <= CPDAF_GROWTH_LIMIT * c10 && secs <= 300.0;
    report(
        5,
        "convergence against the baseline",
        pass,
        &format!(
            "median steady state {ss_c:.4} vs baseline {ss_b:.4}; baseline {b10:.4} -> {bend:.4}; filter {c10:.4} -> {cend:.4}; {secs:.0} s"
        ),
    );
    assert!(pass);
}

#[test]
fn c06_unknown_initialization_bootstrap() {
    let outcomes: Vec<(bool, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let cfg = ScenarioConfig {
                n_robots: 5,
                seed,
                formations: vec![FormationSpec {
                    shape: FormationShape::Circle { radius: 1.35 },
                    center: [0.0; 3],
                    heading: 0.0,
                    transition: 10.0,
                    dwell: 20.0,
                }],
                ..Default::default()
            };
            let log = run_scenario(&cfg).unwrap();
            let e0 = log.rows[0].e_rel_cpdaf;
            let horizon = log.rows.last().unwrap().time_s / 3.0;
            let best = log.rows.iter().filter(|r| r.time_s <= horizon).map(|r| r.e_rel_cpdaf).fold(f64::INFINITY, f64::min);
            (best < BOOTSTRAP_FRACTION * e0, best / e0)
        })
        .collect();
    let ok = outcomes.iter().filter(|o| o.0).count();
    let pass = ok >= REQUIRED_SEEDS;
    let ratio = median(outcomes.iter().map(|o| o.1).collect());
    report(
        6,
        "bootstrap from unknown initialization",
        pass,
        &format!("{ok}/{SEEDS} seeds reach 10% of the initial error within a third of the run (median best ratio {ratio:.3})"),
    );
    assert!(pass);
}

#[test]
fn c07_formation_convergence() {
    let outcomes: Vec<(bool, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = ScenarioConfig {
                n_robots: 7,
                seed,
                formations: vec![FormationSpec {
                    shape: FormationShape::Line { length: 6.0 },
                    center: [0.0; 3],
                    heading: 0.0,
                    transition: 20.0,
                    dwell: 20.0,
                }],
                ..Default::default()
            };
            cfg.flags.controller_mode = ControllerMode::EstimatedFeedback;
            cfg.prior.mean = PriorMean::Truth;
            let log = run_scenario(&cfg).unwrap();
            let rows = &log.rows;
            let tail = &rows[rows.len() - rows.len() / 10..];
            let worst_tail = tail.iter().map(|r| r.e_rel_final).fold(0.0, f64::max);
            let decreased = worst_tail < rows[0].e_rel_final;
            (decreased && worst_tail < FORMATION_THRESHOLD, worst_tail)
        })
        .collect();
    let ok = outcomes.iter().filter(|o| o.0).count();
    let pass = ok >= REQUIRED_SEEDS;
    let worst = outcomes.iter().map(|o| o.1).fold(0.0, f64::max);
    report(7, "formation convergence", pass, &format!("{ok}/{SEEDS} seeds below {FORMATION_THRESHOLD} over the last 10% (worst tail {worst:.4})"));
    assert!(pass);
}

#[test]
fn c08_gating_speedup() {
    let results = run_bench(&[3, 5, 7], &BenchConfig::default()).unwrap();
    let s: Vec<f64> = results.iter().map(|r| r.speedup).collect();
    let speed_ok = s[1] > 1.0 && s[2] > 1.0 && s[0] <= s[1] && s[1] <= s[2];

    // A gate that admits everything must reproduce the ungated posterior.
    let mut cfg = cpdaf_core::bench::bench_scenario(5, 2);
    cfg.flags.enable_baseline = false;
    let mut sim = cpdaf_core::sim::Simulation::new(&cfg).unwrap();
    let params = CpdafParams { hypothesis_cap: None, ..cfg.cpdaf_params() };
    let wide = GateParams { p_g: 1.0 - 1e-15, ..cfg.gate };
    let ut = cfg.ut;
    let mut worst = 0.0f64;
    let (mut hyps_wide, mut hyps_none) = (0usize, 0usize);
    for _ in 0..30 {
        sim.step_with(|state, dets| {
            let (a, ra) = station_sweep(state, dets, &params, Some(&wide), &ut, SweepOrder::Forward)?;
            let (b, rb) = station_sweep(state, dets, &params, None, &ut, SweepOrder::Forward)?;
            worst = worst.max(angle_aware_max_diff(&a.x, &b.x, 5)).max((&a.p - &b.p).amax());
            hyps_wide += ra.iter().map(|r| r.n_hypotheses).sum::<usize>();
            hyps_none += rb.iter().map(|r| r.n_hypotheses).sum::<usize>();
            Ok((b, rb))
        })
        .unwrap();
    }
    let sanity_ok = worst <= ORACLE_TOL;
    let pass = speed_ok && sanity_ok;
    report(
        8,
        "gating speedup",
        pass,
        &format!("speedup N=3 {:.2}, N=5 {:.2}, N=7 {:.2}; wide gate vs none max deviation {worst:.2e} ({hyps_wide} vs {hyps_none} hypotheses)", s[0], s[1], s[2]),
    );
    assert!(pass);
}

fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn c09_noise_statistics() {
    let cfg = SensorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks: Vec<(String, f64, f64)> = Vec::new();
    for d in [1.0, 3.0, 6.0] {
        let truth: Vector3<f64> = Vector3::new(0.6, -0.3, 0.2).normalize() * d;
        let u = truth / d;
        let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = u.cross(&helper).normalize();
        let e2 = u.cross(&e1);
        let (mut dist, mut b1, mut b2) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..NOISE_SAMPLES {
            let (un, dn) = noisy_reading(&truth, &cfg, &mut rng).unwrap();
            dist.push(dn - d);
            b1.push(un.dot(&e1).asin());
            b2.push(un.dot(&e2).asin());
        }
        checks.push((format!("sigma_d({d})"), sample_std(&dist), 0.0495 * d + 0.0336));
        checks.push((format!("sigma_b,1({d})"), sample_std(&b1), 0.008));
        checks.push((format!("sigma_b,2({d})"), sample_std(&b2), 0.008));
    }
    let frames = vec![Pose2z::identity(), Pose2z::new(Vector3::new(2.0, -1.0, 0.3), 0.7)];
    let gt = GroundTruth::from_frames(frames).unwrap();
    let (mut ot, mut opsi) = (Vec::new(), Vec::new());
    for _ in 0..NOISE_SAMPLES / 2 {
        for z in gen_odometry(&gt, &cfg, &mut rng) {
            let local = gt.local_pose(z.robot);
            ot.push(z.t_meas.x - local.t.x);
            opsi.push(wrap(z.psi_meas.radians() - local.psi.radians()));
        }
    }
    checks.push(("sigma_o,t".into(), sample_std(&ot), 0.01));
    checks.push(("sigma_o,psi".into(), sample_std(&opsi), 0.002));
    let worst = checks.iter().map(|(_, got, want)| (got / want - 1.0).abs()).fold(0.0, f64::max);
    let pass = worst <= NOISE_REL_TOL;
    let detail: Vec<String> = checks.iter().map(|(k, got, want)| format!("{k} {got:.5}/{want:.5}")).collect();
    report(9, "noise statistics", pass, &format!("worst relative error {:.2}%; {}", 100.0 * worst, detail.join(", ")));
    assert!(pass);
}

fn outputs(cfg: &ScenarioConfig) -> (String, String, RunLog) {
    let log = run_scenario(cfg).unwrap();
    (errors_csv(&log), Summary::from_log(&log).unwrap().to_json().unwrap(), log)
}

#[test]
fn c10_determinism() {
    let cfg = ScenarioConfig { n_robots: 5, seed: 4, duration: Some(20.0), ..Default::default() };
    let (e1, s1, l1) = outputs(&cfg);
    let (e2, s2, l2) = outputs(&cfg);
    let (e3, _, _) = outputs(&ScenarioConfig { seed: 5, ..cfg.clone() });
    let pass = e1 == e2 && s1 == s2 && l1.to_json().unwrap() == l2.to_json().unwrap() && e1 != e3;
    report(10, "determinism", pass, &format!("errors.csv {} bytes, summary.json {} bytes, identical: {}", e1.len(), s1.len(), e1 == e2 && s1 == s2));
    assert!(pass);
}

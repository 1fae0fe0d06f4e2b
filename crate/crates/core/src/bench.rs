//! Update-time comparison between the gated, capped association filter and
//! full enumeration without a gate.
//!
//! Both modes process the same predicted state and the same detections at
//! every step; the run continues with the gated posterior. The scenario is a
//! hold on a 1.35 m circle with the filter started at the true initial
//! configuration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::association::count_hypotheses;
use crate::cpdaf::{station_sweep, SweepOrder, UpdateReport};
use crate::error::{Error, Result};
use crate::sim::formation::{FormationShape, FormationSpec};
use crate::sim::scenario::{PriorMean, ScenarioConfig, Simulation};

/// Detection steps discarded before timing starts.
pub const WARMUP_STEPS: usize = 5;

/// Fewest timed steps a size needs.
pub const MIN_TIMED_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    /// Detection steps per size, warmup included.
    pub steps: usize,
    /// Sizes whose full enumeration could exceed this many hypotheses in
    /// one station update are skipped.
    pub max_hypotheses: u128,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { seed: 1, steps: WARMUP_STEPS + MIN_TIMED_STEPS, max_hypotheses: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub n_robots: usize,
    /// Median sweep time with gating and the hypothesis cap, µs.
    pub t_with_us: f64,
    /// Median sweep time with every pairing admitted and full enumeration, µs.
    pub t_without_us: f64,
    pub speedup: f64,
    pub mean_hyps_with: f64,
    pub mean_hyps_without: f64,
    pub max_hyps_with: usize,
    pub max_hyps_without: usize,
    pub timed_steps: usize,
    /// Set when the size was not run because of the hypothesis limit.
    pub skipped: bool,
}

impl BenchResult {
    fn skipped(n_robots: usize) -> Self {
        BenchResult {
            n_robots,
            t_with_us: f64::NAN,
            t_without_us: f64::NAN,
            speedup: f64::NAN,
            mean_hyps_with: f64::NAN,
            mean_hyps_without: f64::NAN,
            max_hyps_with: 0,
            max_hyps_without: 0,
            timed_steps: 0,
            skipped: true,
        }
    }
}

pub fn bench_scenario(n_robots: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        n_robots,
        seed,
        formations: vec![FormationSpec {
            shape: FormationShape::Circle { radius: 1.35 },
            center: [0.0; 3],
            heading: 0.0,
            transition: 10.0,
            dwell: 1000.0,
        }],
        ..Default::default()
    };
    cfg.prior.mean = PriorMean::Truth;
    cfg
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn hypotheses(reports: &[UpdateReport]) -> (usize, usize) {
    (reports.iter().map(|r| r.n_hypotheses).sum(), reports.iter().map(|r| r.n_hypotheses).max().unwrap_or(0))
}

/// Times one team size.
pub fn bench_size(n_robots: usize, cfg: &BenchConfig) -> Result<BenchResult> {
    if n_robots < 2 {
        return Err(Error::InvalidParam("bench needs at least 2 robots".into()));
    }
    if cfg.steps < WARMUP_STEPS + MIN_TIMED_STEPS {
        return Err(Error::InvalidParam(format!("bench needs at least {} steps", WARMUP_STEPS + MIN_TIMED_STEPS)));
    }
    let scenario = bench_scenario(n_robots, cfg.seed);
    let mut sim = Simulation::new(&scenario)?;
    let gated = scenario.cpdaf_params();
    let full = crate::cpdaf::CpdafParams { hypothesis_cap: None, ..gated };
    let gate = scenario.gate;
    let ut = scenario.ut;

    let mut t_with = Vec::new();
    let mut t_without = Vec::new();
    let (mut hyps_with, mut hyps_without) = (Vec::new(), Vec::new());
    let (mut max_with, mut max_without) = (0, 0);
    let mut detection_steps = 0;
    while detection_steps < cfg.steps {
        let mut too_large = false;
        let mut timed = false;
        sim.step_with(|state, dets| {
            let worst = dets.iter().map(|d| count_hypotheses(n_robots - 1, d.len())).max().unwrap_or(0);
            if worst > cfg.max_hypotheses {
                too_large = true;
                return Ok((state.clone(), Vec::new()));
            }
            let start = Instant::now();
            let (_, reports_full) = station_sweep(state, dets, &full, None, &ut, SweepOrder::Forward)?;
            let elapsed_full = start.elapsed().as_secs_f64() * 1e6;
            let start = Instant::now();
            let (next, reports) = station_sweep(state, dets, &gated, Some(&gate), &ut, SweepOrder::Forward)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e6;
            if detection_steps >= WARMUP_STEPS {
                t_with.push(elapsed);
                t_without.push(elapsed_full);
                let (sum, max) = hypotheses(&reports);
                let (sum_full, max_full) = hypotheses(&reports_full);
                hyps_with.push(sum as f64 / reports.len().max(1) as f64);
                hyps_without.push(sum_full as f64 / reports_full.len().max(1) as f64);
                max_with = max_with.max(max);
                max_without = max_without.max(max_full);
            }
            timed = true;
            Ok((next, reports))
        })?;
        if too_large {
            return Ok(BenchResult::skipped(n_robots));
        }
        if timed {
            detection_steps += 1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let t_with_us = median(&mut t_with);
    let t_without_us = median(&mut t_without);
    Ok(BenchResult {
        n_robots,
        t_with_us,
        t_without_us,
        speedup: t_without_us / t_with_us,
        mean_hyps_with: mean(&hyps_with),
        mean_hyps_without: mean(&hyps_without),
        max_hyps_with: max_with,
        max_hyps_without: max_without,
        timed_steps: t_with.len(),
        skipped: false,
    })
}

pub fn run_bench(sizes: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    sizes.iter().map(|&n| bench_size(n, cfg)).collect()
}

pub const BENCH_COLUMNS: &str =
    "n_robots,t_with_us,t_without_us,speedup,mean_hyps_with,mean_hyps_without,max_hyps_with,max_hyps_without,skipped";

pub fn bench_csv(results: &[BenchResult]) -> String {
    let mut out = format!("# columns: {BENCH_COLUMNS}\n{BENCH_COLUMNS}\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.n_robots,
            r.t_with_us,
            r.t_without_us,
            r.speedup,
            r.mean_hyps_with,
            r.mean_hyps_without,
            r.max_hyps_with,
            r.max_hyps_without,
            r.skipped
        ));
    }
    out
}

//! Scenario configuration and the closed simulation loop.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::GateParams;
use crate::cpdaf::{station_sweep, CpdafParams, FormulaVariants, SweepOrder, UpdateReport};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geom::Pose2z;
use crate::metrics::{absolute_error, convergence_error, relative_error};
use crate::odometry::{odom_update, OdomNoise};
use crate::runlog::{RunHeader, RunLog, StepRecord};
use crate::sim::baseline::NaiveBaseline;
use crate::sim::formation::{formation_controller, formation_waypoints, schedule, ControllerGains, FormationShape, FormationSpec, Segment};
use crate::sim::sensors::{gen_detections, gen_odometry, SensorConfig};
use crate::sim::truth::{step_truth, FrameDrift, GroundTruth, SpawnConfig, TruthCommand};
use crate::state::{base, predict, ProcessNoiseConfig, RobotControl, RobotState, SystemState, PSI_FRAME, PSI_GLOBAL, ROBOT_DIM};
use crate::unscented::UtParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    /// Robots follow their references using the true state.
    #[default]
    Scripted,
    /// References are planned from, and tracked with, the filter estimate.
    EstimatedFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    pub enable_gating: bool,
    pub enable_baseline: bool,
    pub controller_mode: ControllerMode,
    pub formula_variants: FormulaVariants,
}

impl Default for Flags {
    fn default() -> Self {
        Flags { enable_gating: true, enable_baseline: true, controller_mode: ControllerMode::Scripted, formula_variants: FormulaVariants::default() }
    }
}

/// Filter-side association parameters. `p_d` and `lambda_fp` default to the
/// simulated sensor's values; the volume always matches the sensor sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpdafConfig {
    pub p_d: Option<f64>,
    pub lambda_fp: Option<f64>,
    /// `null` disables the cap.
    pub hypothesis_cap: Option<usize>,
    pub iterations: usize,
}

impl Default for CpdafConfig {
    fn default() -> Self {
        let d = CpdafParams::default();
        CpdafConfig { p_d: None, lambda_fp: None, hypothesis_cap: d.hypothesis_cap, iterations: d.iterations }
    }
}

/// Prior on the unknown frame offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub sigma_frame_p: f64,
    pub sigma_frame_psi: f64,
    /// Mean of the frame offsets: `zero` or, for diagnostics, `truth`.
    pub mean: PriorMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMean {
    #[default]
    Zero,
    Truth,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { sigma_frame_p: 5.0, sigma_frame_psi: PI, mean: PriorMean::Zero }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_robots: usize,
    pub seed: u64,
    pub dt: f64,
    /// Simulated time in seconds; defaults to the length of the formation sequence.
    pub duration: Option<f64>,
    pub formations: Vec<FormationSpec>,
    pub sensors: SensorConfig,
    pub process_noise: ProcessNoiseConfig,
    pub gate: GateParams,
    pub cpdaf: CpdafConfig,
    pub ut: UtParams,
    pub spawn: SpawnConfig,
    pub prior: PriorConfig,
    pub drift: FrameDrift,
    pub controller: ControllerGains,
    pub flags: Flags,
    /// Relative error below which the run counts as converged.
    pub convergence_threshold: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_robots: 7,
            seed: 1,
            dt: 0.1,
            duration: None,
            formations: circle_expansion(10.0, 10.0),
            sensors: SensorConfig::default(),
            process_noise: ProcessNoiseConfig::default(),
            gate: GateParams::default(),
            cpdaf: CpdafConfig::default(),
            ut: UtParams::default(),
            spawn: SpawnConfig::default(),
            prior: PriorConfig::default(),
            drift: FrameDrift::default(),
            controller: ControllerGains::default(),
            flags: Flags::default(),
            convergence_threshold: 0.05,
        }
    }
}

/// 1.35 m → 2.7 m → 1.35 m → 2.7 m → 1.35 m circles.
pub fn circle_expansion(transition: f64, dwell: f64) -> Vec<FormationSpec> {
    [1.35, 2.7, 1.35, 2.7, 1.35]
        .iter()
        .map(|&radius| FormationSpec { shape: FormationShape::Circle { radius }, center: [0.0; 3], heading: 0.0, transition, dwell })
        .collect()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_robots < 2 {
            return Err(Error::InvalidParam("n_robots must be at least 2".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParam("dt must be positive".into()));
        }
        if let Some(d) = self.duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidParam("duration must be positive".into()));
            }
        }
        if self.formations.is_empty() && self.duration.is_none() {
            return Err(Error::InvalidParam("formations must not be empty when duration is unset".into()));
        }
        for f in &self.formations {
            f.validate()?;
        }
        self.sensors.validate()?;
        self.process_noise.validate()?;
        self.gate.validate()?;
        self.cpdaf_params().validate()?;
        self.ut.validate()?;
        self.spawn.validate(self.n_robots)?;
        self.drift.validate()?;
        self.controller.validate()?;
        if !(self.prior.sigma_frame_p > 0.0 && self.prior.sigma_frame_psi > 0.0) {
            return Err(Error::InvalidParam("prior sigmas must be positive".into()));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(Error::InvalidParam("convergence_threshold must be positive".into()));
        }
        if self.n_steps() == 0 {
            return Err(Error::InvalidParam("duration shorter than one time step".into()));
        }
        Ok(())
    }

    pub fn cpdaf_params(&self) -> CpdafParams {
        CpdafParams {
            p_d: self.cpdaf.p_d.unwrap_or(self.sensors.p_d),
            lambda_fp: self.cpdaf.lambda_fp.unwrap_or(self.sensors.lambda_fp),
            volume: self.sensors.volume(),
            hypothesis_cap: self.cpdaf.hypothesis_cap,
            iterations: self.cpdaf.iterations,
            compat: self.flags.formula_variants,
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.duration.unwrap_or_else(|| self.formations.iter().map(FormationSpec::duration).sum())
    }

    pub fn n_steps(&self) -> usize {
        (self.total_duration() / self.dt + 1e-9).floor() as usize
    }

    fn every(&self, rate_hz: f64) -> usize {
        ((1.0 / (rate_hz * self.dt)).round() as usize).max(1)
    }

    pub fn odom_noise(&self) -> OdomNoise {
        // The filter never trusts odometry more than a small floor.
        OdomNoise { sigma_t: self.sensors.sigma_o_t.max(1e-4), sigma_psi: self.sensors.sigma_o_psi.max(1e-5) }
    }
}

/// Filter prior: own local state from the first odometry reading, frame
/// offsets from the configured prior.
pub fn initial_estimate(cfg: &ScenarioConfig, truth: &GroundTruth, odom: &[crate::odometry::OdomMeasurement]) -> Result<SystemState> {
    let n = truth.n_robots();
    let noise = cfg.odom_noise();
    let (vt, vpsi) = (noise.sigma_t.powi(2), noise.sigma_psi.powi(2));
    let (fp, fpsi) = (cfg.prior.sigma_frame_p.powi(2), cfg.prior.sigma_frame_psi.powi(2));
    let mut robots = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for (i, z) in odom.iter().enumerate() {
        let frame = match cfg.prior.mean {
            PriorMean::Zero => Pose2z::identity(),
            PriorMean::Truth => truth.frames[i],
        };
        let frame = if i == 0 { Pose2z::identity() } else { frame };
        robots.push(RobotState {
            t_local: z.t_meas,
            psi_global: frame.psi + z.psi_meas,
            t_frame: frame.t,
            psi_frame: frame.psi,
        });
        vars.push(if i == 0 {
            [vt, vt, vt, vpsi, 0.0, 0.0, 0.0, 0.0]
        } else {
            [vt, vt, vt, vpsi + fpsi, fp, fp, fp, fpsi]
        });
    }
    let mut state = SystemState::from_robots(&robots, &vars)?;
    // The global yaw inherits the frame yaw uncertainty.
    for i in 1..n {
        let (g, f) = (base(i) + PSI_GLOBAL, base(i) + PSI_FRAME);
        state.p[(g, f)] = fpsi;
        state.p[(f, g)] = fpsi;
    }
    Ok(state)
}

/// What the detection update produced in one step.
#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub reports: Vec<UpdateReport>,
    /// Wall time of the whole sweep, µs.
    pub elapsed_us: u64,
}

/// The running simulation: truth, filter, baseline and the formation timeline.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub truth: GroundTruth,
    pub filter: SystemState,
    pub baseline: Option<NaiveBaseline>,
    rng: ChaCha8Rng,
    params: CpdafParams,
    timeline: Vec<(f64, FormationSpec)>,
    segment: Option<(usize, Vec<Segment>)>,
    step: usize,
    odom_every: usize,
    detect_every: usize,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let truth = GroundTruth::spawn(cfg.n_robots, &cfg.spawn, &mut rng)?;
        let odom = gen_odometry(&truth, &cfg.sensors, &mut rng);
        let filter = initial_estimate(cfg, &truth, &odom)?;
        let baseline = if cfg.flags.enable_baseline { Some(NaiveBaseline::new(truth.poses.clone(), &odom)?) } else { None };
        Ok(Simulation {
            cfg: cfg.clone(),
            truth,
            filter,
            baseline,
            rng,
            params: cfg.cpdaf_params(),
            timeline: schedule(&cfg.formations),
            segment: None,
            step: 0,
            odom_every: cfg.every(cfg.sensors.odometry_rate_hz),
            detect_every: cfg.every(cfg.sensors.detection_rate_hz),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn estimated_poses(&self) -> Vec<Pose2z> {
        (0..self.cfg.n_robots).map(|i| self.filter.pose_in_common(i)).collect()
    }

    fn controller_poses(&self) -> Vec<Pose2z> {
        match self.cfg.flags.controller_mode {
            ControllerMode::Scripted => self.truth.poses.clone(),
            ControllerMode::EstimatedFeedback => self.estimated_poses(),
        }
    }

    /// Active segment index and time into it, or `None` past the schedule.
    fn active_segment(&self, t: f64) -> Option<(usize, f64)> {
        let eps = 1e-9;
        self.timeline
            .iter()
            .enumerate()
            .rev()
            .find(|(_, (start, _))| t + eps >= *start)
            .filter(|(_, (start, spec))| t + eps < start + spec.duration())
            .map(|(k, (start, _))| (k, t - start))
    }

    fn commands(&mut self) -> Result<Vec<TruthCommand>> {
        let n = self.cfg.n_robots;
        let dt = self.cfg.dt;
        let t = self.time();
        let Some((k, tau)) = self.active_segment(t) else {
            return Ok(vec![TruthCommand::default(); n]);
        };
        if self.segment.as_ref().map(|(idx, _)| *idx) != Some(k) {
            let start = self.controller_poses();
            let spec = self.timeline[k].1;
            let goals = formation_waypoints(&spec, n, &start)?;
            let segs = start.iter().zip(goals).map(|(s, g)| Segment { start: *s, goal: g, duration: spec.transition }).collect();
            self.segment = Some((k, segs));
        }
        let segs = &self.segment.as_ref().expect("segment set above").1;
        match self.cfg.flags.controller_mode {
            ControllerMode::Scripted => Ok(segs
                .iter()
                .zip(&self.truth.poses)
                .map(|(seg, now)| {
                    let (next, _) = seg.sample(tau + dt);
                    TruthCommand { v: (next.t - now.t) / dt, omega: next.psi.minus(now.psi) / dt }
                })
                .collect()),
            ControllerMode::EstimatedFeedback => {
                let refs: Vec<_> = segs.iter().map(|seg| seg.sample(tau)).collect();
                formation_controller(&self.estimated_poses(), &refs, &self.cfg.controller)
            }
        }
    }

    /// Advances one time step. Detection updates, when due, are performed by
    /// `sweep`, which receives the predicted state and the detections of
    /// every robot.
    pub fn step_with<F>(&mut self, mut sweep: F) -> Result<(StepRecord, SweepOutcome)>
    where
        F: FnMut(&SystemState, &[Vec<Detection>]) -> Result<(SystemState, Vec<UpdateReport>)>,
    {
        let dt = self.cfg.dt;
        let n = self.cfg.n_robots;
        let cmds = self.commands()?;

        // Commands are executed in each robot's own frame.
        let controls: Vec<RobotControl> = cmds
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let yaw = match self.cfg.flags.controller_mode {
                    ControllerMode::Scripted => self.truth.frames[i].psi.radians(),
                    ControllerMode::EstimatedFeedback => self.filter.x[base(i) + PSI_FRAME],
                };
                GroundTruth::to_local(c, yaw)
            })
            .collect();
        let executed: Vec<TruthCommand> = controls.iter().enumerate().map(|(i, c)| self.truth.from_local(i, c)).collect();
        self.truth = step_truth(&self.truth, &executed, dt)?;
        self.truth.drift_frames(&self.cfg.drift, dt, &mut self.rng);
        self.step += 1;

        self.filter = predict(&self.filter, &controls, dt, &self.cfg.process_noise)?;

        if self.step.is_multiple_of(self.odom_every) {
            let odom = gen_odometry(&self.truth, &self.cfg.sensors, &mut self.rng);
            let noise = self.cfg.odom_noise();
            for z in &odom {
                self.filter = odom_update(&self.filter, z, &noise, &self.cfg.ut)?;
            }
            if let Some(b) = self.baseline.as_mut() {
                b.step(&odom)?;
            }
        }

        let mut outcome = SweepOutcome::default();
        if self.step.is_multiple_of(self.detect_every) {
            let dets = gen_detections(&self.truth, &self.cfg.sensors, &mut self.rng)?;
            let start = std::time::Instant::now();
            let (next, reports) = sweep(&self.filter, &dets)?;
            outcome.elapsed_us = start.elapsed().as_micros() as u64;
            outcome.reports = reports;
            self.filter = next;
        }
        debug_assert_eq!(self.filter.dim(), ROBOT_DIM * n);
        Ok((self.record(&outcome)?, outcome))
    }

    /// One step with the configured station sweep.
    pub fn step(&mut self) -> Result<(StepRecord, SweepOutcome)> {
        let params = self.params;
        let gate = self.cfg.flags.enable_gating.then_some(self.cfg.gate);
        let ut = self.cfg.ut;
        self.step_with(|state, dets| station_sweep(state, dets, &params, gate.as_ref(), &ut, SweepOrder::Forward))
    }

    /// Row for the current state. `e_rel_final` is filled in once the run ends.
    pub fn record(&self, outcome: &SweepOutcome) -> Result<StepRecord> {
        let estimate = self.estimated_poses();
        let truth = self.truth.poses.clone();
        let baseline = self.baseline.as_ref().map(|b| b.poses.clone());
        let (e_abs_baseline, e_rel_baseline) = match &baseline {
            Some(b) => (Some(absolute_error(b, &truth)?), Some(relative_error(b, &truth)?)),
            None => (None, None),
        };
        let reports = &outcome.reports;
        Ok(StepRecord {
            step: self.step,
            time_s: self.time(),
            e_abs_cpdaf: absolute_error(&estimate, &truth)?,
            e_rel_cpdaf: relative_error(&estimate, &truth)?,
            e_abs_baseline,
            e_rel_baseline,
            e_rel_final: 0.0,
            n_hypotheses: reports.iter().map(|r| r.n_hypotheses).sum(),
            update_us: outcome.elapsed_us,
            max_weight_error: reports.iter().map(|r| (r.beta_sum - 1.0).abs()).fold(0.0, f64::max),
            capped: reports.iter().filter(|r| r.capped).count(),
            dropped: reports.iter().map(|r| r.dropped).sum(),
            degenerate: reports.iter().filter(|r| r.degenerate).count(),
            truth,
            estimate,
            baseline,
        })
    }
}

/// Runs a scenario end to end. Timings are recorded only when
/// `keep_timings` is set so that outputs are reproducible byte for byte.
pub fn run_scenario_with(cfg: &ScenarioConfig, keep_timings: bool) -> Result<RunLog> {
    let wall = std::time::Instant::now();
    let mut sim = Simulation::new(cfg)?;
    let mut rows = Vec::with_capacity(cfg.n_steps() + 1);
    rows.push(sim.record(&SweepOutcome::default())?);
    for _ in 0..cfg.n_steps() {
        let (row, _) = sim.step()?;
        rows.push(row);
    }
    let final_truth = sim.truth.poses.clone();
    for row in rows.iter_mut() {
        row.e_rel_final = convergence_error(&row.estimate, &final_truth)?;
        if !keep_timings {
            row.update_us = 0;
        }
    }
    let total_wall_time_s = if keep_timings { wall.elapsed().as_secs_f64() } else { 0.0 };
    Ok(RunLog::new(RunHeader::new(cfg.clone(), total_wall_time_s), rows))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    run_scenario_with(cfg, false)
}

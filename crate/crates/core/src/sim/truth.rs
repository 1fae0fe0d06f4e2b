//! Noise-free world state.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rz_apply, Pose2z, Yaw};
use crate::state::RobotControl;

/// Velocity command expressed in the common frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TruthCommand {
    pub v: Vector3<f64>,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Pose of each robot in the common frame.
    pub poses: Vec<Pose2z>,
    /// Offset of each robot's odometry frame in the common frame. Entry 0 is
    /// always the identity.
    pub frames: Vec<Pose2z>,
}

/// Random walk applied to the odometry frames of all robots but the
/// reference, standing in for slow odometry drift.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameDrift {
    /// m/√s per axis.
    pub sigma_p: f64,
    /// rad/√s.
    pub sigma_psi: f64,
}

impl FrameDrift {
    pub fn is_active(&self) -> bool {
        self.sigma_p > 0.0 || self.sigma_psi > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p >= 0.0 && self.sigma_psi >= 0.0 && self.sigma_p.is_finite() && self.sigma_psi.is_finite()) {
            return Err(Error::InvalidParam("frame drift sigmas must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Spawn region for the unknown frame offsets. Each robot starts at the
/// origin of its own odometry frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpawnConfig {
    /// Half-width of the horizontal box, m.
    pub half_width: f64,
    /// Half-height of the vertical range, m.
    pub half_height: f64,
    /// Minimum horizontal spacing between robots, m.
    pub min_separation: f64,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        SpawnConfig { half_width: 5.0, half_height: 0.5, min_separation: 1.0 }
    }
}

impl SpawnConfig {
    pub fn validate(&self, n_robots: usize) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_height >= 0.0 && self.min_separation >= 0.0) {
            return Err(Error::InvalidParam("spawn extents must be positive".into()));
        }
        // Rough packing bound so rejection sampling terminates.
        let area = (2.0 * self.half_width).powi(2);
        if self.min_separation.powi(2) * n_robots as f64 > 0.5 * area {
            return Err(Error::InvalidParam("spawn box too small for min_separation".into()));
        }
        Ok(())
    }
}

impl GroundTruth {
    /// Every robot at the origin of its own frame.
    pub fn from_frames(frames: Vec<Pose2z>) -> Result<Self> {
        if frames.first() != Some(&Pose2z::identity()) {
            return Err(Error::InvalidParam("reference frame offset must be the identity".into()));
        }
        Ok(GroundTruth { poses: frames.clone(), frames })
    }

    /// Random frame offsets; the reference robot sits at the origin.
    pub fn spawn<R: Rng>(n_robots: usize, cfg: &SpawnConfig, rng: &mut R) -> Result<Self> {
        if n_robots == 0 {
            return Err(Error::InvalidParam("n_robots must be at least 1".into()));
        }
        cfg.validate(n_robots)?;
        let xy = Uniform::new_inclusive(-cfg.half_width, cfg.half_width).expect("valid range");
        let z = Uniform::new_inclusive(-cfg.half_height, cfg.half_height).expect("valid range");
        let yaw = Uniform::new_inclusive(-std::f64::consts::PI, std::f64::consts::PI).expect("valid range");
        let mut frames = vec![Pose2z::identity()];
        while frames.len() < n_robots {
            let t = Vector3::new(xy.sample(rng), xy.sample(rng), z.sample(rng));
            let psi = yaw.sample(rng);
            if frames.iter().all(|f| (f.t - t).xy().norm() >= cfg.min_separation) {
                frames.push(Pose2z::new(t, psi));
            }
        }
        GroundTruth::from_frames(frames)
    }

    pub fn n_robots(&self) -> usize {
        self.poses.len()
    }

    /// Pose of robot `i` in its own odometry frame.
    pub fn local_pose(&self, i: usize) -> Pose2z {
        self.frames[i].relative(&self.poses[i])
    }

    /// Converts a common-frame command into the robot's own frame using the
    /// given estimate of its frame yaw.
    pub fn to_local(cmd: &TruthCommand, frame_yaw: f64) -> RobotControl {
        RobotControl { v_local: rz_apply(-frame_yaw, &cmd.v), omega: cmd.omega }
    }

    /// Common-frame command produced by executing a local-frame command.
    pub fn from_local(&self, i: usize, c: &RobotControl) -> TruthCommand {
        TruthCommand { v: rz_apply(self.frames[i].psi.radians(), &c.v_local), omega: c.omega }
    }

    /// Applies a frame random walk over `dt`, keeping robot poses fixed.
    pub fn drift_frames<R: Rng>(&mut self, drift: &FrameDrift, dt: f64, rng: &mut R) {
        if !drift.is_active() {
            return;
        }
        let np = Normal::new(0.0, drift.sigma_p * dt.sqrt()).expect("finite sigma");
        let ny = Normal::new(0.0, drift.sigma_psi * dt.sqrt()).expect("finite sigma");
        for f in self.frames.iter_mut().skip(1) {
            f.t += Vector3::new(np.sample(rng), np.sample(rng), np.sample(rng));
            f.psi = f.psi + Yaw::new(ny.sample(rng));
        }
    }
}

/// Exact integration of constant common-frame velocities over `dt`.
pub fn step_truth(gt: &GroundTruth, cmds: &[TruthCommand], dt: f64) -> Result<GroundTruth> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::BadTimeStep(dt));
    }
    if cmds.len() != gt.n_robots() {
        return Err(Error::Dimension { what: "commands", expected: gt.n_robots(), got: cmds.len() });
    }
    let mut out = gt.clone();
    for (p, c) in out.poses.iter_mut().zip(cmds) {
        p.t += c.v * dt;
        p.psi = Yaw::new(p.psi.radians() + c.omega * dt);
    }
    Ok(out)
}

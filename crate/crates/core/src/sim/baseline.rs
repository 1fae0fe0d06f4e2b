//! Dead reckoning from a known initial configuration, without detections.

use crate::error::{Error, Result};
use crate::geom::{compose_to_common, Pose2z};
use crate::odometry::OdomMeasurement;

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBaseline {
    /// Current pose estimate of every robot in the common frame.
    pub poses: Vec<Pose2z>,
    last: Vec<Pose2z>,
}

fn odom_pose(z: &OdomMeasurement) -> Pose2z {
    Pose2z { t: z.t_meas, psi: z.psi_meas }
}

impl NaiveBaseline {
    /// Starts from the true poses and the first odometry reading of each robot.
    pub fn new(initial_truth: Vec<Pose2z>, first_odometry: &[OdomMeasurement]) -> Result<Self> {
        if initial_truth.len() != first_odometry.len() {
            return Err(Error::Dimension { what: "baseline odometry", expected: initial_truth.len(), got: first_odometry.len() });
        }
        Ok(NaiveBaseline { poses: initial_truth, last: first_odometry.iter().map(odom_pose).collect() })
    }

    /// Composes the increment between consecutive odometry readings onto each
    /// robot's pose.
    pub fn step(&mut self, odometry: &[OdomMeasurement]) -> Result<()> {
        if odometry.len() != self.poses.len() {
            return Err(Error::Dimension { what: "baseline odometry", expected: self.poses.len(), got: odometry.len() });
        }
        let deltas: Vec<Pose2z> = odometry
            .iter()
            .zip(&self.last)
            .map(|(z, last)| last.relative(&odom_pose(z)))
            .collect();
        naive_baseline_step(&mut self.poses, &deltas)?;
        self.last = odometry.iter().map(odom_pose).collect();
        Ok(())
    }
}

/// Applies body-frame increments to every pose.
pub fn naive_baseline_step(est: &mut [Pose2z], deltas: &[Pose2z]) -> Result<()> {
    if est.len() != deltas.len() {
        return Err(Error::Dimension { what: "baseline increments", expected: est.len(), got: deltas.len() });
    }
    for (p, d) in est.iter_mut().zip(deltas) {
        *p = compose_to_common(p, d);
    }
    Ok(())
}

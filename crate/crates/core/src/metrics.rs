//! Absolute, relative and convergence errors over a team of poses.
//!
//! Each error is the sum over robots of the squared position difference (m²)
//! plus the squared wrapped yaw difference (rad²). The two channels are also
//! reported separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose2z;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub position: f64,
    pub yaw: f64,
}

impl ErrorBreakdown {
    pub fn total(&self) -> f64 {
        self.position + self.yaw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub e_abs: f64,
    pub e_rel: f64,
    pub e_rel_final: f64,
}

fn check(est: &[Pose2z], truth: &[Pose2z]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::Dimension { what: "robot count", expected: truth.len(), got: est.len() });
    }
    if est.is_empty() {
        return Err(Error::InvalidParam("no robots to compare".into()));
    }
    Ok(())
}

fn breakdown(est: &[Pose2z], truth: &[Pose2z]) -> ErrorBreakdown {
    est.iter().zip(truth).fold(ErrorBreakdown::default(), |acc, (e, t)| ErrorBreakdown {
        position: acc.position + (e.t - t.t).norm_squared(),
        yaw: acc.yaw + e.psi.minus(t.psi).powi(2),
    })
}

/// Poses expressed in the body frame of robot 0.
pub fn relative_poses(poses: &[Pose2z]) -> Vec<Pose2z> {
    let reference = poses[0];
    poses.iter().map(|p| reference.relative(p)).collect()
}

pub fn absolute_breakdown(est: &[Pose2z], truth: &[Pose2z]) -> Result<ErrorBreakdown> {
    check(est, truth)?;
    Ok(breakdown(est, truth))
}

pub fn relative_breakdown(est: &[Pose2z], truth: &[Pose2z]) -> Result<ErrorBreakdown> {
    check(est, truth)?;
    Ok(breakdown(&relative_poses(est), &relative_poses(truth)))
}

/// Error of the poses in the common frame.
pub fn absolute_error(est: &[Pose2z], truth: &[Pose2z]) -> Result<f64> {
    Ok(absolute_breakdown(est, truth)?.total())
}

/// Error of the poses relative to robot 0, each side using its own robot 0.
pub fn relative_error(est: &[Pose2z], truth: &[Pose2z]) -> Result<f64> {
    Ok(relative_breakdown(est, truth)?.total())
}

/// Relative error of the current estimate against the final true
/// configuration.
pub fn convergence_error(est_t: &[Pose2z], truth_final: &[Pose2z]) -> Result<f64> {
    relative_error(est_t, truth_final)
}

//! Yaw-only rotations and frame composition.
//!
//! Every fixed odometry frame shares the gravity axis with the common frame,
//! so a rotation between frames reduces to a scalar yaw about +Z.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(a))
}

/// Infallible wrap for values already known to be finite.
#[inline]
pub(crate) fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A yaw angle, always stored wrapped to `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct Yaw(f64);

impl Yaw {
    pub fn new(psi: f64) -> Self {
        Yaw(wrap(psi))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Wrapped difference `self - other`.
    pub fn minus(self, other: Yaw) -> f64 {
        wrap(self.0 - other.0)
    }
}

impl From<f64> for Yaw {
    fn from(v: f64) -> Self {
        Yaw::new(v)
    }
}

impl From<Yaw> for f64 {
    fn from(y: Yaw) -> f64 {
        y.0
    }
}

impl std::ops::Add for Yaw {
    type Output = Yaw;
    fn add(self, rhs: Yaw) -> Yaw {
        Yaw::new(self.0 + rhs.0)
    }
}

impl std::ops::Neg for Yaw {
    type Output = Yaw;
    fn neg(self) -> Yaw {
        Yaw::new(-self.0)
    }
}

/// Rotates the horizontal components of `v` by `psi` about +Z.
#[inline]
pub fn rz_apply(psi: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = psi.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Applies the transpose (inverse) of the yaw rotation.
#[inline]
pub fn rz_apply_inv(psi: f64, v: &Vector3<f64>) -> Vector3<f64> {
    rz_apply(-psi, v)
}

/// Position plus yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2z {
    pub t: Vector3<f64>,
    pub psi: Yaw,
}

impl Default for Pose2z {
    fn default() -> Self {
        Pose2z::identity()
    }
}

impl Pose2z {
    pub fn new(t: Vector3<f64>, psi: f64) -> Self {
        Pose2z { t, psi: Yaw::new(psi) }
    }

    pub fn identity() -> Self {
        Pose2z { t: Vector3::zeros(), psi: Yaw::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().all(|v| v.is_finite()) && self.psi.radians().is_finite()
    }

    /// Inverse transform, so that `compose_to_common(p, p.inverse())` is the identity.
    pub fn inverse(&self) -> Pose2z {
        let psi = -self.psi;
        Pose2z { t: -rz_apply(psi.radians(), &self.t), psi }
    }

    /// Expresses `other` (given in the same parent frame as `self`) in the frame of `self`.
    pub fn relative(&self, other: &Pose2z) -> Pose2z {
        compose_to_common(&self.inverse(), other)
    }
}

/// Pose of a robot in the common frame from its pose in its own fixed frame
/// and the offset of that frame in the common frame.
pub fn compose_to_common(frame_offset: &Pose2z, local: &Pose2z) -> Pose2z {
    Pose2z {
        t: rz_apply(frame_offset.psi.radians(), &local.t) + frame_offset.t,
        psi: frame_offset.psi + local.psi,
    }
}

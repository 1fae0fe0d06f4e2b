//! Robot-to-robot detection model.
//!
//! A detection is the position of some other robot expressed in the
//! observer's yaw frame. The sensor itself reports bearing and distance; the
//! filter consumes the Cartesian point together with a covariance mapped from
//! the bearing/distance noise.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::rz_apply;
use crate::state::{base, SystemState, PSI_FRAME, PSI_GLOBAL, T_FRAME, T_LOCAL};

pub const DETECTION_DIM: usize = 3;

/// An anonymous detection: which robot produced it is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub observer: usize,
    pub p_rel: Vector3<f64>,
    pub r_meas: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingDistance {
    pub unit_dir: Vector3<f64>,
    pub d: f64,
}

impl BearingDistance {
    pub fn new(unit_dir: Vector3<f64>, d: f64) -> Result<Self> {
        if (unit_dir.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!("bearing must be a unit vector (norm {})", unit_dir.norm())));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidParam(format!("distance must be positive, got {d}")));
        }
        Ok(BearingDistance { unit_dir, d })
    }
}

/// Distance noise growing linearly with range: `σ_d(d) = slope·d + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceNoise {
    pub slope: f64,
    pub offset: f64,
}

impl Default for DistanceNoise {
    fn default() -> Self {
        DistanceNoise { slope: 0.0495, offset: 0.0336 }
    }
}

impl DistanceNoise {
    pub fn sigma(&self, d: f64) -> f64 {
        self.slope * d + self.offset
    }
}

#[inline]
fn position_in_common(x: &[f64], i: usize) -> Vector3<f64> {
    let b = base(i);
    let local = Vector3::new(x[b + T_LOCAL], x[b + T_LOCAL + 1], x[b + T_LOCAL + 2]);
    let frame = Vector3::new(x[b + T_FRAME], x[b + T_FRAME + 1], x[b + T_FRAME + 2]);
    rz_apply(x[b + PSI_FRAME], &local) + frame
}

#[inline]
pub(crate) fn detection_h_raw(x: &[f64], observer: usize, target: usize) -> Vector3<f64> {
    let d = position_in_common(x, target) - position_in_common(x, observer);
    rz_apply(-x[base(observer) + PSI_GLOBAL], &d)
}

/// Relative position of `target` in the yaw frame of `observer`.
pub fn detection_h(state: &SystemState, observer: usize, target: usize) -> Result<Vector3<f64>> {
    state.check_robot(observer)?;
    state.check_robot(target)?;
    if observer == target {
        return Err(Error::SelfDetection(observer));
    }
    Ok(detection_h_raw(state.x.as_slice(), observer, target))
}

/// Targets seen from `station`: every other robot in index order.
pub fn station_targets(n_robots: usize, station: usize) -> Vec<usize> {
    (0..n_robots).filter(|&j| j != station).collect()
}

/// Stacked predicted detections of all `targets` from `station`.
pub fn station_h(x: &[f64], station: usize, targets: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(DETECTION_DIM * targets.len());
    for (k, &j) in targets.iter().enumerate() {
        let z = detection_h_raw(x, station, j);
        out.fixed_rows_mut::<3>(DETECTION_DIM * k).copy_from(&z);
    }
    out
}

/// Cartesian point and covariance for a bearing/distance reading.
///
/// The covariance is `σ_d(d)²` along the bearing and `d²σ_b²` on the two
/// orthogonal directions, evaluated at the measured distance.
pub fn bearing_distance_to_cartesian<F>(
    bd: &BearingDistance,
    sigma_b: f64,
    sigma_d: F,
) -> Result<(Vector3<f64>, Matrix3<f64>)>
where
    F: Fn(f64) -> f64,
{
    if !(bd.d > 0.0) {
        return Err(Error::InvalidParam(format!("distance must be positive, got {}", bd.d)));
    }
    let u = bd.unit_dir;
    let sd = sigma_d(bd.d);
    let radial = sd * sd;
    let tangential = (bd.d * sigma_b).powi(2);
    let uu = u * u.transpose();
    let r = uu * radial + (Matrix3::identity() - uu) * tangential;
    Ok((u * bd.d, r))
}

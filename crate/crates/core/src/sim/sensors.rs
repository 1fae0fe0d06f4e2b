//! Odometry and detection generation.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::cpdaf::sphere_volume;
use crate::detection::{bearing_distance_to_cartesian, BearingDistance, Detection, DistanceNoise};
use crate::error::{Error, Result};
use crate::geom::{rz_apply_inv, Yaw};
use crate::odometry::OdomMeasurement;
use crate::sim::truth::GroundTruth;

/// Smallest distance a noisy range reading is clamped to, m.
pub const MIN_RANGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Odometry position noise, m.
    pub sigma_o_t: f64,
    /// Odometry yaw noise, rad.
    pub sigma_o_psi: f64,
    /// Bearing noise per tangent axis, rad.
    pub sigma_b: f64,
    pub sigma_d: DistanceNoise,
    pub p_d: f64,
    /// Clutter density, 1/m³.
    pub lambda_fp: f64,
    /// Radius of the detection sphere around each observer, m.
    pub volume_radius: f64,
    pub detection_rate_hz: f64,
    pub odometry_rate_hz: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            sigma_o_t: 0.01,
            sigma_o_psi: 0.002,
            sigma_b: 0.008,
            sigma_d: DistanceNoise::default(),
            p_d: 0.9,
            lambda_fp: 0.5 / sphere_volume(10.0),
            volume_radius: 10.0,
            detection_rate_hz: 10.0,
            odometry_rate_hz: 10.0,
        }
    }
}

impl SensorConfig {
    /// Every noise source off, every robot always detected, no clutter.
    pub fn noise_free() -> Self {
        SensorConfig {
            sigma_o_t: 0.0,
            sigma_o_psi: 0.0,
            sigma_b: 0.0,
            sigma_d: DistanceNoise { slope: 0.0, offset: 0.0 },
            p_d: 1.0,
            lambda_fp: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.sigma_o_t, self.sigma_o_psi, self.sigma_b, self.sigma_d.slope, self.sigma_d.offset];
        if stds.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParam("sensor standard deviations must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_d) {
            return Err(Error::InvalidParam("p_d must be in [0,1]".into()));
        }
        if !(self.lambda_fp >= 0.0 && self.lambda_fp.is_finite()) {
            return Err(Error::InvalidParam("lambda_fp must be finite and >= 0".into()));
        }
        if !(self.volume_radius > 0.0 && self.volume_radius.is_finite()) {
            return Err(Error::InvalidParam("volume_radius must be positive".into()));
        }
        if !(self.detection_rate_hz > 0.0 && self.odometry_rate_hz > 0.0) {
            return Err(Error::InvalidParam("sensor rates must be positive".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        sphere_volume(self.volume_radius)
    }

    pub fn sigma_d_at(&self, d: f64) -> f64 {
        self.sigma_d.sigma(d)
    }

    /// Cartesian detection with its covariance. The standard deviations are
    /// floored so innovation covariances stay invertible without noise.
    fn reading(&self, unit_dir: Vector3<f64>, d: f64, observer: usize) -> Result<Detection> {
        let bd = BearingDistance::new(unit_dir, d)?;
        let floor = 1e-6;
        let (p_rel, r) =
            bearing_distance_to_cartesian(&bd, self.sigma_b.max(floor), |d| self.sigma_d_at(d).max(floor))?;
        Ok(Detection { observer, p_rel, r_meas: r })
    }
}

/// Local pose of every robot with independent Gaussian noise.
pub fn gen_odometry<R: Rng>(gt: &GroundTruth, cfg: &SensorConfig, rng: &mut R) -> Vec<OdomMeasurement> {
    (0..gt.n_robots())
        .map(|i| {
            let local = gt.local_pose(i);
            let noise = Vector3::new(gauss(rng, cfg.sigma_o_t), gauss(rng, cfg.sigma_o_t), gauss(rng, cfg.sigma_o_t));
            OdomMeasurement {
                robot: i,
                t_meas: local.t + noise,
                psi_meas: Yaw::new(local.psi.radians() + gauss(rng, cfg.sigma_o_psi)),
            }
        })
        .collect()
}

fn gauss<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

/// Rotates a unit vector by independent angles `a`, `b` about two axes
/// orthogonal to it (exponential map on the sphere).
pub fn perturb_bearing(u: &Vector3<f64>, a: f64, b: f64) -> Vector3<f64> {
    let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = u.cross(&helper).normalize();
    let e2 = u.cross(&e1);
    let delta = e1 * a + e2 * b;
    let angle = delta.norm();
    if angle == 0.0 {
        return *u;
    }
    (u * angle.cos() + delta * (angle.sin() / angle)).normalize()
}

/// One noisy reading of a true relative position. Returns `None` when the
/// target sits on the observer.
pub fn noisy_reading<R: Rng>(truth_rel: &Vector3<f64>, cfg: &SensorConfig, rng: &mut R) -> Option<(Vector3<f64>, f64)> {
    let d = truth_rel.norm();
    if d < MIN_RANGE {
        return None;
    }
    let u = truth_rel / d;
    let u_noisy = perturb_bearing(&u, gauss(rng, cfg.sigma_b), gauss(rng, cfg.sigma_b));
    let d_noisy = (d + gauss(rng, cfg.sigma_d_at(d))).max(MIN_RANGE);
    Some((u_noisy, d_noisy))
}

/// Anonymous detections for every observer: true detections with
/// probability `p_d`, Poisson clutter uniform in the detection sphere, and
/// a random order.
pub fn gen_detections<R: Rng>(gt: &GroundTruth, cfg: &SensorConfig, rng: &mut R) -> Result<Vec<Vec<Detection>>> {
    let n = gt.n_robots();
    let clutter_mean = cfg.lambda_fp * cfg.volume();
    let poisson = if clutter_mean > 0.0 {
        Some(Poisson::new(clutter_mean).map_err(|e| Error::InvalidParam(e.to_string()))?)
    } else {
        None
    };
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let me = gt.poses[i];
        let mut dets = Vec::new();
        for j in (0..n).filter(|&j| j != i) {
            if unit.sample(rng) >= cfg.p_d {
                continue;
            }
            let rel = rz_apply_inv(me.psi.radians(), &(gt.poses[j].t - me.t));
            if let Some((u, d)) = noisy_reading(&rel, cfg, rng) {
                dets.push(cfg.reading(u, d, i)?);
            }
        }
        let n_clutter = poisson.as_ref().map_or(0, |p| p.sample(rng) as usize);
        for _ in 0..n_clutter {
            let dir = Vector3::new(gauss(rng, 1.0), gauss(rng, 1.0), gauss(rng, 1.0));
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            let r = cfg.volume_radius * unit.sample(rng).cbrt();
            dets.push(cfg.reading(dir / norm, r.max(MIN_RANGE), i)?);
        }
        dets.shuffle(rng);
        out.push(dets);
    }
    Ok(out)
}

//! Formation targets, smooth point-to-point references and the tracking
//! controller.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rz_apply, Pose2z};
use crate::sim::truth::TruthCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormationShape {
    /// Keep the poses held at the start of the segment.
    Hold,
    /// Evenly spaced on a circle, each robot facing outward.
    Circle { radius: f64 },
    /// Equal spacing along a segment of the given length.
    Line { length: f64 },
    /// Apex robot followed by two symmetric legs swept back by 45°. `length`
    /// is the spacing between consecutive robots times `N − 1`.
    Vline { length: f64 },
}

/// One segment of a formation sequence: move to `shape` over `transition`
/// seconds, then stay for `dwell` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationSpec {
    pub shape: FormationShape,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default)]
    pub heading: f64,
    pub transition: f64,
    #[serde(default)]
    pub dwell: f64,
}

impl FormationSpec {
    pub fn validate(&self) -> Result<()> {
        let size_ok = match self.shape {
            FormationShape::Hold => true,
            FormationShape::Circle { radius: s } | FormationShape::Line { length: s } | FormationShape::Vline { length: s } => {
                s > 0.0 && s.is_finite()
            }
        };
        if !size_ok {
            return Err(Error::InvalidParam("formation radius/length must be positive".into()));
        }
        if !(self.transition >= 0.0 && self.dwell >= 0.0 && self.transition.is_finite() && self.dwell.is_finite()) {
            return Err(Error::InvalidParam("formation transition and dwell must be >= 0".into()));
        }
        if self.center.iter().chain([&self.heading]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("formation center/heading"));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.transition + self.dwell
    }
}

/// Target slot of every robot, robot `i` taking slot `i`. `current` is only
/// consulted by [`FormationShape::Hold`].
pub fn formation_waypoints(spec: &FormationSpec, n_robots: usize, current: &[Pose2z]) -> Result<Vec<Pose2z>> {
    if n_robots < 2 {
        return Err(Error::InvalidParam("a formation needs at least 2 robots".into()));
    }
    spec.validate()?;
    let center = Vector3::from(spec.center);
    let place = |offset: Vector3<f64>, yaw: f64| {
        Pose2z::new(center + rz_apply(spec.heading, &offset), spec.heading + yaw)
    };
    let out = match spec.shape {
        FormationShape::Hold => {
            if current.len() != n_robots {
                return Err(Error::Dimension { what: "held poses", expected: n_robots, got: current.len() });
            }
            current.to_vec()
        }
        FormationShape::Circle { radius } => (0..n_robots)
            .map(|k| {
                let a = TAU * k as f64 / n_robots as f64;
                place(Vector3::new(radius * a.cos(), radius * a.sin(), 0.0), a)
            })
            .collect(),
        FormationShape::Line { length } => {
            let step = length / (n_robots - 1) as f64;
            (0..n_robots).map(|k| place(Vector3::new(-0.5 * length + step * k as f64, 0.0, 0.0), 0.0)).collect()
        }
        FormationShape::Vline { length } => {
            let step = length / (n_robots - 1) as f64;
            (0..n_robots)
                .map(|k| {
                    let rank = k.div_ceil(2) as f64;
                    let side = if k % 2 == 1 { 1.0 } else { -1.0 };
                    let back = Vector3::new(-FRAC_PI_4.cos(), side * FRAC_PI_4.sin(), 0.0);
                    place(back * (rank * step), 0.0)
                })
                .collect()
        }
    };
    Ok(out)
}

/// Quintic time scaling with zero velocity and acceleration at both ends.
pub fn quintic(tau: f64) -> (f64, f64) {
    let s = tau.clamp(0.0, 1.0);
    let pos = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let vel = if (0.0..=1.0).contains(&tau) { 30.0 * s * s * (1.0 - s) * (1.0 - s) } else { 0.0 };
    (pos, vel)
}

/// Smooth straight-line reference from `start` to `goal` over `duration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Pose2z,
    pub goal: Pose2z,
    pub duration: f64,
}

impl Segment {
    /// Reference pose and common-frame velocity at time `t` into the segment.
    pub fn sample(&self, t: f64) -> (Pose2z, TruthCommand) {
        let dyaw = self.goal.psi.minus(self.start.psi);
        let dt = self.goal.t - self.start.t;
        if self.duration <= 0.0 {
            return (self.goal, TruthCommand::default());
        }
        let (s, ds) = quintic(t / self.duration);
        let rate = ds / self.duration;
        let pose = Pose2z::new(self.start.t + dt * s, self.start.psi.radians() + dyaw * s);
        (pose, TruthCommand { v: dt * rate, omega: dyaw * rate })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    /// Position gain, 1/s.
    pub k_p: f64,
    /// Yaw gain, 1/s.
    pub k_psi: f64,
    /// Speed limit, m/s.
    pub v_max: f64,
    /// Yaw-rate limit, rad/s.
    pub omega_max: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains { k_p: 1.0, k_psi: 1.0, v_max: 0.5, omega_max: PI / 4.0 }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if [self.k_p, self.k_psi, self.v_max, self.omega_max].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParam("controller gains must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Feedforward plus proportional feedback on the pose error, saturated.
pub fn formation_controller(
    estimate: &[Pose2z],
    references: &[(Pose2z, TruthCommand)],
    gains: &ControllerGains,
) -> Result<Vec<TruthCommand>> {
    if estimate.len() != references.len() {
        return Err(Error::Dimension { what: "controller references", expected: estimate.len(), got: references.len() });
    }
    Ok(estimate
        .iter()
        .zip(references)
        .map(|(est, (r, ff))| {
            let mut v = ff.v + (r.t - est.t) * gains.k_p;
            let speed = v.norm();
            if speed > gains.v_max {
                v *= gains.v_max / speed;
            }
            let omega = (ff.omega + gains.k_psi * r.psi.minus(est.psi)).clamp(-gains.omega_max, gains.omega_max);
            TruthCommand { v, omega }
        })
        .collect())
}

/// Segment boundaries of a formation sequence: `(start_time, spec)`.
pub fn schedule(specs: &[FormationSpec]) -> Vec<(f64, FormationSpec)> {
    let mut t = 0.0;
    specs
        .iter()
        .map(|s| {
            let start = t;
            t += s.duration();
            (start, *s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Yaw;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn spec(shape: FormationShape) -> FormationSpec {
        FormationSpec { shape, center: [0.0; 3], heading: 0.0, transition: 5.0, dwell: 1.0 }
    }

    #[test]
    fn circle_slots() {
        let w = formation_waypoints(&spec(FormationShape::Circle { radius: 1.35 }), 4, &[]).unwrap();
        for (k, p) in w.iter().enumerate() {
            assert_relative_eq!(p.t.norm(), 1.35, epsilon = 1e-12);
            let angle = p.t.y.atan2(p.t.x).rem_euclid(TAU);
            assert_relative_eq!(angle, FRAC_PI_2 * k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn line_spacing() {
        let w = formation_waypoints(&spec(FormationShape::Line { length: 6.0 }), 7, &[]).unwrap();
        for pair in w.windows(2) {
            assert_relative_eq!((pair[1].t - pair[0].t).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn vline_is_symmetric() {
        let w = formation_waypoints(&spec(FormationShape::Vline { length: 6.0 }), 7, &[]).unwrap();
        assert_eq!(w[0].t, Vector3::zeros());
        let left = w.iter().filter(|p| p.t.y > 1e-9).count();
        let right = w.iter().filter(|p| p.t.y < -1e-9).count();
        assert_eq!((left, right), (3, 3));
        for k in [1, 3, 5] {
            assert_relative_eq!(w[k].t.x, w[k + 1].t.x, epsilon = 1e-12);
            assert_relative_eq!(w[k].t.y, -w[k + 1].t.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(formation_waypoints(&spec(FormationShape::Circle { radius: 0.0 }), 4, &[]).is_err());
        assert!(formation_waypoints(&spec(FormationShape::Line { length: 6.0 }), 1, &[]).is_err());
    }

    #[test]
    fn quintic_boundaries() {
        assert_eq!(quintic(0.0), (0.0, 0.0));
        let (p, v) = quintic(1.0);
        assert_relative_eq!(p, 1.0);
        assert_relative_eq!(v, 0.0);
        assert_relative_eq!(quintic(0.5).0, 0.5);
    }

    #[test]
    fn segment_velocity_integrates_to_goal() {
        let seg = Segment {
            start: Pose2z::new(Vector3::new(1.0, 0.0, 0.0), 3.0),
            goal: Pose2z::new(Vector3::new(-1.0, 2.0, 0.5), -3.0),
            duration: 4.0,
        };
        let dt = 1e-3;
        let mut t = Vector3::new(1.0, 0.0, 0.0);
        let mut yaw = 3.0;
        for k in 0..4000 {
            let (_, c) = seg.sample((k as f64 + 0.5) * dt);
            t += c.v * dt;
            yaw += c.omega * dt;
        }
        assert_relative_eq!(t, seg.goal.t, epsilon = 1e-6);
        // The short way round: +0.28 rad through ±π.
        assert_relative_eq!(Yaw::new(yaw).minus(seg.goal.psi), 0.0, epsilon = 1e-6);
        assert!(yaw > 3.0);
    }

    #[test]
    fn controller_examples() {
        let gains = ControllerGains { k_p: 1.0, v_max: 0.5, ..Default::default() };
        let here = Pose2z::new(Vector3::new(0.2, 0.3, 0.0), 0.4);
        let zero = controller_at(&here, &here, &gains);
        assert_eq!(zero.v, Vector3::zeros());
        assert_eq!(zero.omega, 0.0);
        let gap = controller_at(&Pose2z::identity(), &Pose2z::new(Vector3::new(1.0, 0.0, 0.0), 0.0), &gains);
        assert_relative_eq!(gap.v, Vector3::new(0.5, 0.0, 0.0));
    }

    fn controller_at(est: &Pose2z, target: &Pose2z, gains: &ControllerGains) -> TruthCommand {
        formation_controller(&[*est], &[(*target, TruthCommand::default())], gains).unwrap()[0]
    }

    #[test]
    fn schedule_accumulates() {
        let s = schedule(&[spec(FormationShape::Hold), spec(FormationShape::Line { length: 2.0 })]);
        assert_eq!(s[0].0, 0.0);
        assert_eq!(s[1].0, 6.0);
    }
}

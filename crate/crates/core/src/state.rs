//! Coupled team state and its constant-frame process model.
//!
//! Each robot contributes eight components: its position in its own fixed
//! frame, its yaw in the common frame, and the translation and yaw of its
//! fixed frame in the common frame. Robot 0 is the reference: its fixed frame
//! *is* the common frame, so its frame components are pinned to zero with
//! zero covariance.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{compose_to_common, wrap, Pose2z, Yaw};
use crate::linalg;

pub const ROBOT_DIM: usize = 8;
pub const T_LOCAL: usize = 0;
pub const PSI_GLOBAL: usize = 3;
pub const T_FRAME: usize = 4;
pub const PSI_FRAME: usize = 7;

/// Index of the first component of robot `i` in the stacked state.
#[inline]
pub fn base(i: usize) -> usize {
    ROBOT_DIM * i
}

/// State indices that hold angles.
pub fn angle_indices(n_robots: usize) -> Vec<usize> {
    (0..n_robots).flat_map(|i| [base(i) + PSI_GLOBAL, base(i) + PSI_FRAME]).collect()
}

/// The reference robot's frame components, which never move.
pub fn pinned_indices() -> Vec<usize> {
    (T_FRAME..ROBOT_DIM).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub t_local: Vector3<f64>,
    pub psi_global: Yaw,
    pub t_frame: Vector3<f64>,
    pub psi_frame: Yaw,
}

impl RobotState {
    /// Frame offset of this robot's fixed frame in the common frame.
    pub fn frame(&self) -> Pose2z {
        Pose2z { t: self.t_frame, psi: self.psi_frame }
    }

    /// Pose in the common frame. Position goes through the frame offset; yaw
    /// is the directly estimated common-frame yaw.
    pub fn pose_in_common(&self) -> Pose2z {
        let local = Pose2z { t: self.t_local, psi: Yaw::default() };
        Pose2z { t: compose_to_common(&self.frame(), &local).t, psi: self.psi_global }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    n_robots: usize,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl SystemState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(ROBOT_DIM) || x.is_empty() {
            return Err(Error::Dimension { what: "state length", expected: ROBOT_DIM, got: x.len() });
        }
        let n = x.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::Dimension { what: "covariance size", expected: n, got: p.nrows() });
        }
        if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        let mut s = SystemState { n_robots: n / ROBOT_DIM, x, p };
        s.normalize();
        Ok(s)
    }

    /// Builds a state from per-robot means and per-robot diagonal variances
    /// (eight entries each, in state order).
    pub fn from_robots(robots: &[RobotState], variances: &[[f64; ROBOT_DIM]]) -> Result<Self> {
        if robots.len() != variances.len() {
            return Err(Error::Dimension { what: "variance blocks", expected: robots.len(), got: variances.len() });
        }
        let n = robots.len() * ROBOT_DIM;
        let mut x = DVector::zeros(n);
        let mut p = DMatrix::zeros(n, n);
        for (i, (r, v)) in robots.iter().zip(variances).enumerate() {
            write_robot(&mut x, i, r);
            for (k, var) in v.iter().enumerate() {
                if *var < 0.0 {
                    return Err(Error::InvalidParam(format!("negative variance for robot {i}")));
                }
                p[(base(i) + k, base(i) + k)] = *var;
            }
        }
        SystemState::new(x, p)
    }

    pub fn n_robots(&self) -> usize {
        self.n_robots
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn check_robot(&self, i: usize) -> Result<()> {
        if i >= self.n_robots {
            return Err(Error::BadRobot { index: i, n_robots: self.n_robots });
        }
        Ok(())
    }

    pub fn robot(&self, i: usize) -> RobotState {
        read_robot(self.x.as_slice(), i)
    }

    pub fn set_robot(&mut self, i: usize, r: &RobotState) {
        write_robot(&mut self.x, i, r);
        self.normalize();
    }

    pub fn pose_in_common(&self, i: usize) -> Pose2z {
        self.robot(i).pose_in_common()
    }

    /// Wraps the yaw components and re-pins the reference frame.
    pub fn normalize(&mut self) {
        for i in angle_indices(self.n_robots) {
            self.x[i] = wrap(self.x[i]);
        }
        for i in pinned_indices() {
            self.x[i] = 0.0;
        }
        linalg::symmetrize(&mut self.p);
        let n = self.dim();
        for i in pinned_indices() {
            for j in 0..n {
                self.p[(i, j)] = 0.0;
                self.p[(j, i)] = 0.0;
            }
        }
    }

    /// Symmetrizes and PSD-projects the covariance; returns the smallest
    /// eigenvalue when a projection was needed.
    pub fn stabilize(&mut self) -> Option<f64> {
        self.normalize();
        linalg::stabilize_covariance(&mut self.p, &pinned_indices())
    }
}

pub(crate) fn read_robot(x: &[f64], i: usize) -> RobotState {
    let b = base(i);
    RobotState {
        t_local: Vector3::new(x[b], x[b + 1], x[b + 2]),
        psi_global: Yaw::new(x[b + PSI_GLOBAL]),
        t_frame: Vector3::new(x[b + T_FRAME], x[b + T_FRAME + 1], x[b + T_FRAME + 2]),
        psi_frame: Yaw::new(x[b + PSI_FRAME]),
    }
}

fn write_robot(x: &mut DVector<f64>, i: usize, r: &RobotState) {
    let b = base(i);
    for k in 0..3 {
        x[b + T_LOCAL + k] = r.t_local[k];
        x[b + T_FRAME + k] = r.t_frame[k];
    }
    x[b + PSI_GLOBAL] = r.psi_global.radians();
    x[b + PSI_FRAME] = r.psi_frame.radians();
}

/// Velocity command for one robot: linear velocity in its own fixed frame and
/// yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotControl {
    pub v_local: Vector3<f64>,
    pub omega: f64,
}

pub type ControlInput = [RobotControl];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessNoiseConfig {
    /// Velocity noise, m/s per axis.
    pub sigma_v: f64,
    /// Yaw-rate noise, rad/s.
    pub sigma_omega: f64,
    /// Frame translation drift, m/√s.
    pub sigma_drift_p: f64,
    /// Frame yaw drift, rad/√s.
    pub sigma_drift_psi: f64,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        ProcessNoiseConfig { sigma_v: 0.02, sigma_omega: 0.005, sigma_drift_p: 1e-4, sigma_drift_psi: 1e-5 }
    }
}

impl ProcessNoiseConfig {
    pub fn zero() -> Self {
        ProcessNoiseConfig { sigma_v: 0.0, sigma_omega: 0.0, sigma_drift_p: 0.0, sigma_drift_psi: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_v", self.sigma_v),
            ("sigma_omega", self.sigma_omega),
            ("sigma_drift_p", self.sigma_drift_p),
            ("sigma_drift_psi", self.sigma_drift_psi),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Diagonal of the discretized process noise `Q·dt` for one robot.
    pub fn discrete_diagonal(&self, robot: usize, dt: f64) -> [f64; ROBOT_DIM] {
        let v = self.sigma_v.powi(2) * dt;
        let w = self.sigma_omega.powi(2) * dt;
        let (dp, dpsi) = if robot == 0 {
            (0.0, 0.0)
        } else {
            (self.sigma_drift_p.powi(2) * dt, self.sigma_drift_psi.powi(2) * dt)
        };
        [v, v, v, w, dp, dp, dp, dpsi]
    }
}

/// Propagates the state through the integrator model with a zero-order hold
/// on the velocity input.
pub fn predict(
    state: &SystemState,
    u: &ControlInput,
    dt: f64,
    q: &ProcessNoiseConfig,
) -> Result<SystemState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::BadTimeStep(dt));
    }
    let n = state.n_robots();
    if u.len() != n {
        return Err(Error::Dimension { what: "control input (4 per robot)", expected: 4 * n, got: 4 * u.len() });
    }
    let mut out = state.clone();
    for (i, c) in u.iter().enumerate() {
        let b = base(i);
        for k in 0..3 {
            out.x[b + T_LOCAL + k] += c.v_local[k] * dt;
        }
        out.x[b + PSI_GLOBAL] += c.omega * dt;
        for (k, qd) in q.discrete_diagonal(i, dt).iter().enumerate() {
            out.p[(b + k, b + k)] += qd;
        }
    }
    out.normalize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_robot_state() -> SystemState {
        let r0 = RobotState { t_local: Vector3::new(0.5, 0.0, 1.0), psi_global: Yaw::new(0.2), ..Default::default() };
        let r1 = RobotState {
            t_local: Vector3::new(-1.0, 2.0, 0.0),
            psi_global: Yaw::new(-1.0),
            t_frame: Vector3::new(3.0, 1.0, 0.0),
            psi_frame: Yaw::new(0.5),
        };
        SystemState::from_robots(&[r0, r1], &[[0.1; 8], [0.2; 8]]).unwrap()
    }

    #[test]
    fn reference_frame_is_pinned() {
        let s = two_robot_state();
        for i in pinned_indices() {
            assert_eq!(s.x[i], 0.0);
            assert!(s.p.row(i).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let s = two_robot_state();
        let u = vec![RobotControl::default(); 2];
        let out = predict(&s, &u, 0.1, &ProcessNoiseConfig::zero()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn integrator_advances_local_position() {
        let s = SystemState::from_robots(&[RobotState::default()], &[[0.0; 8]]).unwrap();
        let u = [RobotControl { v_local: Vector3::new(1.0, 0.0, 0.0), omega: 0.0 }];
        let out = predict(&s, &u, 0.1, &ProcessNoiseConfig::zero()).unwrap();
        assert_abs_diff_eq!(out.x[0], 0.1, epsilon = 1e-15);
        assert!(out.x.iter().skip(1).all(|v| *v == 0.0));
    }

    #[test]
    fn process_noise_adds_q_dt() {
        let s = SystemState::from_robots(&[RobotState::default()], &[[0.0; 8]]).unwrap();
        let q = ProcessNoiseConfig { sigma_v: 0.1, ..ProcessNoiseConfig::zero() };
        let out = predict(&s, &[RobotControl::default()], 0.1, &q).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(out.p[(k, k)], 0.001, epsilon = 1e-15);
        }
        assert_eq!(out.p[(3, 3)], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = two_robot_state();
        let u = vec![RobotControl::default(); 2];
        assert!(matches!(predict(&s, &u, 0.0, &ProcessNoiseConfig::default()), Err(Error::BadTimeStep(_))));
        assert!(matches!(predict(&s, &u[..1], 0.1, &ProcessNoiseConfig::default()), Err(Error::Dimension { .. })));
    }

    fn control() -> impl Strategy<Value = RobotControl> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -0.5..0.5f64)
            .prop_map(|(x, y, z, w)| RobotControl { v_local: Vector3::new(x, y, z), omega: w })
    }

    proptest! {
        #[test]
        fn predict_is_linear_in_input(a in control(), b in control(), c in control(), d in control()) {
            let s = two_robot_state();
            let q = ProcessNoiseConfig::zero();
            let dt = 0.05;
            let sum = [
                RobotControl { v_local: a.v_local + c.v_local, omega: a.omega + c.omega },
                RobotControl { v_local: b.v_local + d.v_local, omega: b.omega + d.omega },
            ];
            let f = |u: &[RobotControl]| predict(&s, u, dt, &q).unwrap().x;
            let zero = [RobotControl::default(); 2];
            let lhs = f(&sum) - f(&[c, d]);
            let rhs = f(&[a, b]) - f(&zero);
            for i in 0..lhs.len() {
                let diff = if angle_indices(2).contains(&i) { wrap(lhs[i] - rhs[i]) } else { lhs[i] - rhs[i] };
                prop_assert!(diff.abs() < 1e-12);
            }
        }

        #[test]
        fn covariance_never_shrinks(sv in 0.0..1.0f64, sw in 0.0..1.0f64, sp in 0.0..1.0f64, dt in 0.001..1.0f64) {
            let s = two_robot_state();
            let q = ProcessNoiseConfig { sigma_v: sv, sigma_omega: sw, sigma_drift_p: sp, sigma_drift_psi: sp };
            let out = predict(&s, &[RobotControl::default(); 2], dt, &q).unwrap();
            prop_assert!(linalg::min_eigenvalue(&(&out.p - &s.p)) >= -1e-15);
            for i in pinned_indices() {
                prop_assert!(out.p.row(i).iter().all(|v| *v == 0.0));
            }
        }
    }
}

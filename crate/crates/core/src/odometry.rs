//! Visual-inertial odometry measurement: each robot observes its own pose in
//! its own fixed frame. No data association is involved.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap, Yaw};
use crate::state::{angle_indices, base, SystemState, PSI_FRAME, PSI_GLOBAL, T_LOCAL};
use crate::unscented::{kalman_correct, measurement_stats, UtParams};

pub const ODOM_DIM: usize = 4;
const ODOM_ANGLES: [usize; 1] = [3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomMeasurement {
    pub robot: usize,
    pub t_meas: Vector3<f64>,
    pub psi_meas: Yaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdomNoise {
    pub sigma_t: f64,
    pub sigma_psi: f64,
}

impl Default for OdomNoise {
    fn default() -> Self {
        OdomNoise { sigma_t: 0.01, sigma_psi: 0.002 }
    }
}

impl OdomNoise {
    pub fn covariance(&self) -> DMatrix<f64> {
        let t = self.sigma_t.powi(2);
        DMatrix::from_diagonal(&DVector::from_vec(vec![t, t, t, self.sigma_psi.powi(2)]))
    }
}

fn odom_h_raw(x: &[f64], robot: usize) -> DVector<f64> {
    let b = base(robot);
    DVector::from_vec(vec![
        x[b + T_LOCAL],
        x[b + T_LOCAL + 1],
        x[b + T_LOCAL + 2],
        wrap(x[b + PSI_GLOBAL] - x[b + PSI_FRAME]),
    ])
}

/// Predicted odometry of `robot`: its local position and its yaw in its own
/// fixed frame, `ψ_global − ψ_frame`.
pub fn odom_h(state: &SystemState, robot: usize) -> Result<DVector<f64>> {
    state.check_robot(robot)?;
    Ok(odom_h_raw(state.x.as_slice(), robot))
}

pub fn odom_update(
    state: &SystemState,
    z: &OdomMeasurement,
    noise: &OdomNoise,
    params: &UtParams,
) -> Result<SystemState> {
    state.check_robot(z.robot)?;
    if !(noise.sigma_t > 0.0 && noise.sigma_psi > 0.0) {
        return Err(Error::InvalidParam("odometry noise must be positive".into()));
    }
    let robot = z.robot;
    let stats = measurement_stats(
        &state.x,
        &state.p,
        |x| odom_h_raw(x.as_slice(), robot),
        &noise.covariance(),
        &ODOM_ANGLES,
        &angle_indices(state.n_robots()),
        params,
    )?;
    let mut innovation = DVector::from_vec(vec![z.t_meas.x, z.t_meas.y, z.t_meas.z, z.psi_meas.radians()]);
    innovation -= &stats.z_hat;
    innovation[3] = wrap(innovation[3]);
    let (x, p) = kalman_correct(&state.x, &state.p, &stats, &innovation)?;
    let mut out = SystemState::new(x, p)?;
    out.stabilize();
    Ok(out)
}

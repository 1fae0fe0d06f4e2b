//! Scaled unscented transform.
//!
//! Produces the predicted measurement mean, the innovation covariance and the
//! measurement/state cross-covariance for an arbitrary measurement function.
//! Both the odometry update and the association filter consume these
//! statistics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::wrap;
use crate::linalg;

/// Parameters of the scaled unscented transform. `kappa = None` selects
/// `3 - n` for an `n`-dimensional state.
///
/// `angle_spread_limit` bounds how far a sigma point may move any periodic
/// state component from the mean, rad. Without it a yaw standard deviation
/// near π places points a full turn away, where they alias back onto the
/// mean's opposite side and invert the cross-covariance. Columns that exceed
/// the bound are sampled closer and their deviations rescaled, which keeps
/// linear maps exact. `None` disables the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: Option<f64>,
    pub angle_spread_limit: Option<f64>,
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams { alpha: 1.0, beta: 2.0, kappa: None, angle_spread_limit: Some(std::f64::consts::FRAC_PI_2) }
    }
}

/// Mean and covariance weights of the sigma points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtWeights {
    pub mean0: f64,
    pub cov0: f64,
    pub rest: f64,
    /// `n + λ`, the squared scaling of the covariance square root.
    pub spread: f64,
}

impl UtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParam("ut.alpha must be in (0, 1]".into()));
        }
        if !self.beta.is_finite() || self.kappa.is_some_and(|k| !k.is_finite()) {
            return Err(Error::InvalidParam("ut parameters must be finite".into()));
        }
        if self.angle_spread_limit.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParam("ut.angle_spread_limit must be positive".into()));
        }
        Ok(())
    }

    pub fn kappa_for(&self, n: usize) -> f64 {
        self.kappa.unwrap_or(3.0 - n as f64)
    }

    /// `λ = α²(n + κ) − n`.
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha.powi(2) * (n as f64 + self.kappa_for(n)) - n as f64
    }

    pub fn weights(&self, n: usize) -> Result<UtWeights> {
        self.validate()?;
        let lambda = self.lambda(n);
        let spread = n as f64 + lambda;
        if !(spread > 0.0) {
            return Err(Error::InvalidParam(format!("n + lambda must be positive, got {spread}")));
        }
        let mean0 = lambda / spread;
        Ok(UtWeights {
            mean0,
            cov0: mean0 + 1.0 - self.alpha.powi(2) + self.beta,
            rest: 0.5 / spread,
            spread,
        })
    }
}

/// The `2n + 1` sigma points: the mean, then `x + cᵢsᵢ` and `x − cᵢsᵢ` for
/// each column `sᵢ` of `√((n+λ)P)`. The shrink `cᵢ` is 1 unless the column
/// moves an angle component past the spread limit.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    /// Scaled square-root columns, before shrinking.
    pub offsets: DMatrix<f64>,
    pub shrink: Vec<f64>,
    pub weights: UtWeights,
}

impl SigmaPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_weight(&self, i: usize) -> f64 {
        if i == 0 {
            self.weights.mean0
        } else {
            self.weights.rest
        }
    }

    pub fn cov_weight(&self, i: usize) -> f64 {
        if i == 0 {
            self.weights.cov0
        } else {
            self.weights.rest
        }
    }

    /// Unshrunk deviation of point `i` from the mean.
    pub fn deviation(&self, i: usize) -> DVector<f64> {
        let n = self.offsets.ncols();
        match i {
            0 => DVector::zeros(self.offsets.nrows()),
            i if i <= n => self.offsets.column(i - 1).into_owned(),
            i => -self.offsets.column(i - 1 - n),
        }
    }

    /// Shrink applied to point `i`; 1 for the central point.
    pub fn shrink_of(&self, i: usize) -> f64 {
        let n = self.offsets.ncols();
        match i {
            0 => 1.0,
            i if i <= n => self.shrink[i - 1],
            i => self.shrink[i - 1 - n],
        }
    }
}

pub fn sigma_points(x: &DVector<f64>, p: &DMatrix<f64>, params: &UtParams) -> Result<SigmaPoints> {
    sigma_points_on(x, p, params, &[])
}

/// Sigma points with `state_angles` treated as periodic components.
pub fn sigma_points_on(x: &DVector<f64>, p: &DMatrix<f64>, params: &UtParams, state_angles: &[usize]) -> Result<SigmaPoints> {
    let n = x.len();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::Dimension { what: "covariance size", expected: n, got: p.nrows() });
    }
    if state_angles.iter().any(|&k| k >= n) {
        return Err(Error::InvalidParam("angle index outside state".into()));
    }
    let weights = params.weights(n)?;
    let offsets = linalg::sqrt_psd(p)? * weights.spread.sqrt();
    let shrink: Vec<f64> = (0..n)
        .map(|i| {
            let reach = state_angles.iter().map(|&k| offsets[(k, i)].abs()).fold(0.0, f64::max);
            match params.angle_spread_limit {
                Some(limit) if reach > limit => limit / reach,
                _ => 1.0,
            }
        })
        .collect();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(x.clone());
    for (i, c) in shrink.iter().enumerate() {
        points.push(x + offsets.column(i) * *c);
    }
    for (i, c) in shrink.iter().enumerate() {
        points.push(x - offsets.column(i) * *c);
    }
    Ok(SigmaPoints { points, offsets, shrink, weights })
}

/// Predicted-measurement statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasStats {
    pub z_hat: DVector<f64>,
    /// Innovation covariance, measurement noise included.
    pub p_zz: DMatrix<f64>,
    /// Measurement/state cross-covariance (`m × n`).
    pub p_zx: DMatrix<f64>,
}

impl MeasStats {
    pub fn dim(&self) -> usize {
        self.z_hat.len()
    }
}

fn residual(a: &DVector<f64>, b: &DVector<f64>, angles: &[usize]) -> DVector<f64> {
    let mut d = a - b;
    for &k in angles {
        d[k] = wrap(d[k]);
    }
    d
}

/// Unscented statistics of `h` under `N(x, P)`, with `r` added to the
/// innovation covariance. Measurement components listed in `angles` are
/// averaged and differenced on the circle; state components listed in
/// `state_angles` are subject to the spread limit.
///
/// When the standard weighting yields an indefinite covariance (possible with
/// a negative central weight and a strongly nonlinear `h`) the covariance is
/// recomputed about the central point, which is PSD by construction and
/// identical for linear `h`.
pub fn measurement_stats<F>(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    h: F,
    r: &DMatrix<f64>,
    angles: &[usize],
    state_angles: &[usize],
    params: &UtParams,
) -> Result<MeasStats>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let sp = sigma_points_on(x, p, params, state_angles)?;
    let zs: Vec<DVector<f64>> = sp.points.iter().map(&h).collect();
    let m = zs[0].len();
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::Dimension { what: "measurement noise size", expected: m, got: r.nrows() });
    }
    if angles.iter().any(|&k| k >= m) {
        return Err(Error::InvalidParam("angle index outside measurement".into()));
    }
    if zs.iter().any(|z| z.len() != m || z.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("measurement function output"));
    }

    let z0 = &zs[0];
    let mut z_hat = z0.clone() * sp.mean_weight(0);
    let mut angle_acc = vec![0.0; angles.len()];
    for (i, z) in zs.iter().enumerate().skip(1) {
        z_hat += z * sp.mean_weight(i);
        for (a, &k) in angles.iter().enumerate() {
            angle_acc[a] += sp.mean_weight(i) * wrap(z[k] - z0[k]);
        }
    }
    for (a, &k) in angles.iter().enumerate() {
        z_hat[k] = wrap(z0[k] + angle_acc[a]);
    }

    let n = x.len();
    let mut p_zz = DMatrix::zeros(m, m);
    let mut p_zx = DMatrix::zeros(m, n);
    for (i, z) in zs.iter().enumerate() {
        let dz = residual(z, &z_hat, angles) / sp.shrink_of(i);
        p_zz.ger(sp.cov_weight(i), &dz, &dz, 1.0);
        if i > 0 {
            p_zx.ger(sp.cov_weight(i), &dz, &sp.deviation(i), 1.0);
        }
    }
    linalg::symmetrize(&mut p_zz);

    let scale = p_zz.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if m > 0 && SymmetricEigen::new(p_zz.clone()).eigenvalues.min() < -1e-12 * scale {
        p_zz.fill(0.0);
        for (i, z) in zs.iter().enumerate().skip(1) {
            let dz = residual(z, z0, angles) / sp.shrink_of(i);
            p_zz.ger(sp.weights.rest, &dz, &dz, 1.0);
        }
        linalg::symmetrize(&mut p_zz);
    }

    p_zz += r;
    Ok(MeasStats { z_hat, p_zz, p_zx })
}

/// Statistics of `h` under the prior `N(x, P)` through the statistical linear
/// regression of `h` about a second density `N(x_lin, P_lin)`, typically the
/// latest posterior. The regression `h(x) ≈ A x + b` with residual covariance
/// `Ω` is evaluated on the prior: `ẑ = h̄ + A (x − x_lin)`, `P_zx = A P`,
/// `P_zz = A P Aᵀ + Ω + r`. With `x_lin = x` and `P_lin = P` this reproduces
/// [`measurement_stats`].
#[allow(clippy::too_many_arguments)]
pub fn relinearized_stats<F>(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    x_lin: &DVector<f64>,
    p_lin: &DMatrix<f64>,
    h: F,
    r: &DMatrix<f64>,
    angles: &[usize],
    state_angles: &[usize],
    params: &UtParams,
) -> Result<MeasStats>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    if x_lin.len() != n || p.shape() != (n, n) || p_lin.shape() != (n, n) {
        return Err(Error::Dimension { what: "linearization point size", expected: n, got: x_lin.len() });
    }
    let m_dim = r.nrows();
    let lin = measurement_stats(x_lin, p_lin, h, &DMatrix::zeros(m_dim, m_dim), angles, state_angles, params)?;
    let m = lin.dim();

    // A = P_zx P_lin⁻¹ on the directions P_lin spans, through its Cholesky factor.
    let idx = linalg::active_indices(p_lin);
    let mut a = DMatrix::zeros(m, n);
    if !idx.is_empty() {
        let full = linalg::sqrt_psd(p_lin)?;
        let l = DMatrix::from_fn(idx.len(), idx.len(), |i, j| full[(idx[i], idx[j])]);
        let zx = DMatrix::from_fn(m, idx.len(), |i, j| lin.p_zx[(i, idx[j])]);
        // Solve A_s L Lᵀ = zx as L Lᵀ A_sᵀ = zxᵀ.
        let mut t = zx.transpose();
        if !l.solve_lower_triangular_mut(&mut t) || !l.transpose().solve_upper_triangular_mut(&mut t) {
            return Err(Error::SingularInnovation);
        }
        for (j, &k) in idx.iter().enumerate() {
            for i in 0..m {
                a[(i, k)] = t[(j, i)];
            }
        }
    }

    let mut omega = &lin.p_zz - &a * p_lin * a.transpose();
    linalg::symmetrize(&mut omega);
    let eig = SymmetricEigen::new(omega);
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let omega = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();

    let mut dx = x - x_lin;
    for &k in state_angles {
        dx[k] = wrap(dx[k]);
    }
    let mut z_hat = &lin.z_hat + &a * dx;
    for &k in angles {
        z_hat[k] = wrap(z_hat[k]);
    }
    let p_zx = &a * p;
    let mut p_zz = &p_zx * a.transpose() + omega;
    linalg::symmetrize(&mut p_zz);
    p_zz += r;
    Ok(MeasStats { z_hat, p_zz, p_zx })
}

/// Standard Kalman correction with the unscented statistics: `K = P_zxᵀ P_zz⁻¹`,
/// `x ← x + K ν`, `P ← P − K P_zz Kᵀ`.
pub fn kalman_correct(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    stats: &MeasStats,
    innovation: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = stats.p_zz.clone().cholesky().ok_or(Error::SingularInnovation)?;
    let gain_t = chol.solve(&stats.p_zx);
    let x_post = x + gain_t.transpose() * innovation;
    let p_post = p - stats.p_zx.transpose() * gain_t;
    Ok((x_post, p_post))
}

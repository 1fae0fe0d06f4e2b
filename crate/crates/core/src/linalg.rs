//! Small dense-matrix helpers shared by the filters.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Indices whose diagonal entry is non-zero. Rows and columns of a valid
/// covariance with a zero diagonal entry are identically zero.
pub fn active_indices(p: &DMatrix<f64>) -> Vec<usize> {
    (0..p.nrows()).filter(|&i| p[(i, i)] != 0.0).collect()
}

fn submatrix(p: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| p[(idx[r], idx[c])])
}

pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (p[(r, c)] + p[(c, r)]);
            p[(r, c)] = v;
            p[(c, r)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    if p.nrows() == 0 {
        return 0.0;
    }
    let mut s = p.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Square-root factor `S` with `S Sᵀ = P` for a positive semidefinite `P`.
///
/// Exactly-zero rows/columns are carried through as zero rows of `S`. On
/// Cholesky failure the active block is symmetrized and jittered once by
/// `1e-9 · trace / n`; if it still fails the smallest eigenvalue is reported.
pub fn sqrt_psd(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Dimension { what: "covariance columns", expected: n, got: p.ncols() });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let idx = active_indices(p);
    let mut out = DMatrix::zeros(n, n);
    if idx.is_empty() {
        return Ok(out);
    }
    let mut sub = submatrix(p, &idx);
    symmetrize(&mut sub);
    let chol = match sub.clone().cholesky() {
        Some(c) => c,
        None => {
            let k = idx.len() as f64;
            let jitter = 1e-9 * sub.trace() / k;
            let mut jittered = sub.clone();
            if jitter > 0.0 {
                for i in 0..idx.len() {
                    jittered[(i, i)] += jitter;
                }
            }
            match jittered.cholesky() {
                Some(c) => c,
                None => return Err(Error::Indefinite { min_eigenvalue: min_eigenvalue(&sub) }),
            }
        }
    };
    let l = chol.l();
    for (r, &ir) in idx.iter().enumerate() {
        for (c, &ic) in idx.iter().enumerate().take(r + 1) {
            out[(ir, ic)] = l[(r, c)];
        }
    }
    Ok(out)
}

/// Symmetrizes `p`, zeroes the `pinned` rows and columns, and projects the
/// remaining block onto the PSD cone when it is not positive definite.
///
/// Returns the smallest eigenvalue seen when a projection was needed.
pub fn stabilize_covariance(p: &mut DMatrix<f64>, pinned: &[usize]) -> Option<f64> {
    symmetrize(p);
    let n = p.nrows();
    for &i in pinned {
        for j in 0..n {
            p[(i, j)] = 0.0;
            p[(j, i)] = 0.0;
        }
    }
    // Rows that are entirely zero are exactly known components and need no repair.
    let idx: Vec<usize> = (0..n).filter(|&i| !pinned.contains(&i) && p.row(i).iter().any(|v| *v != 0.0)).collect();
    if idx.is_empty() {
        return None;
    }
    let sub = submatrix(p, &idx);
    if sub.clone().cholesky().is_some() {
        return None;
    }
    let eig = SymmetricEigen::new(sub);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return Some(min);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    for (r, &ir) in idx.iter().enumerate() {
        for (c, &ic) in idx.iter().enumerate() {
            p[(ir, ic)] = rebuilt[(r, c)];
        }
    }
    symmetrize(p);
    Some(min)
}

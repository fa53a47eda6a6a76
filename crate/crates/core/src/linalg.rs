//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative asymmetry tolerance accepted by the symmetric eigensolver wrappers.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `max |m − mᵀ| / max(1, max |m|)`.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / m.amax().max(1.0)
}

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// The input is symmetrized before decomposition; inputs whose relative asymmetry
/// exceeds [`SYMMETRY_TOL`] are rejected.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !m.is_square() {
        return Err(Error::dim("sym_eigenvalues", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::Invariant(format!(
            "matrix is not symmetric (relative asymmetry {asym:e})"
        )));
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(ev))
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let ev = sym_eigenvalues(m)?;
    Ok(ev.get(0).copied().unwrap_or(f64::NAN))
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let ev = sym_eigenvalues(m)?;
    Ok(ev.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

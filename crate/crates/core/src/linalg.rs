//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

/// Relative singular-value cutoff used for every rank and pseudoinverse decision.
pub const RANK_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,
    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>, LinalgError> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let svd = nalgebra::SVD::try_new(m.clone(), false, false, f64::EPSILON, 0).ok_or(LinalgError::SvdNoConvergence)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn complex_singular_values(m: &DMatrix<Complex<f64>>) -> Result<Vec<f64>, LinalgError> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let svd = nalgebra::SVD::try_new(m.clone(), false, false, f64::EPSILON, 0).ok_or(LinalgError::SvdNoConvergence)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Numerical rank from descending singular values with cutoff `RANK_CUTOFF * s_max`.
pub fn rank_of(singular: &[f64]) -> usize {
    match singular.first() {
        Some(&smax) if smax > 0.0 => {
            let cut = RANK_CUTOFF * smax;
            singular.iter().filter(|&&s| s > cut).count()
        }
        _ => 0,
    }
}

/// Minimum-norm least-squares solution of `J d = r` through the truncated SVD.
pub fn pinv_solve(j: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    let cols = j.ncols();
    if j.is_empty() {
        return Ok(DVector::zeros(cols));
    }
    let svd = nalgebra::SVD::try_new(j.clone(), true, true, f64::EPSILON, 0).ok_or(LinalgError::SvdNoConvergence)?;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = DVector::zeros(cols);
    if smax == 0.0 {
        return Ok(out);
    }
    let cut = RANK_CUTOFF * smax;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            let coef = u.column(k).dot(r) / s;
            out.axpy(coef, &vt.row(k).transpose(), 1.0);
        }
    }
    Ok(out)
}

/// All eigenvalues of a real square matrix, with multiplicity.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or(LinalgError::EigenNoConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part among the eigenvalues (`-inf` for an empty matrix).
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

pub fn determinant(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        1.0
    } else {
        a.clone().lu().determinant()
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| f64::max(acc, libm::fabs(*x)))
}

pub fn two_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

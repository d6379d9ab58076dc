//! Linear stabilizability tests at the origin.
//!
//! * [`spectrum_plus`]: eigenvalues with nonnegative real part.
//! * [`hautus_test`]: `rank [lambda I - A | B] = n` for every such eigenvalue,
//!   which decides local exponential stabilizability by C^1 stationary feedback.
//! * [`full_row_rank_test`]: `rank [A | B] = n`, which decides local exponential
//!   stabilizability by composition operators with C^1 stationary symbols.

use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix};

use crate::error::EvalError;
use crate::linalg::{self, LinalgError};
use crate::model::{linearize, VectorFieldSpec};

/// Eigenvalues with real part at least this value count as nonnegative.
pub const SPECTRUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HautusCheck {
    pub eigenvalue: Complex<f64>,
    pub rank: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HautusVerdict {
    pub stabilizable: bool,
    pub checks: Vec<HautusCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankVerdict {
    pub rank: usize,
    pub full_row_rank: bool,
    pub singular_values: Vec<f64>,
}

fn sort_desc(ev: &mut [Complex<f64>]) {
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Eigenvalues of `a` with `Re >= -1e-9`, with multiplicity, sorted by `(Re, Im)` descending.
pub fn spectrum_plus(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, LinalgError> {
    let mut ev: Vec<_> = linalg::eigenvalues(a)?
        .into_iter()
        .filter(|l| l.re >= -SPECTRUM_TOL)
        .collect();
    sort_desc(&mut ev);
    Ok(ev)
}

/// The complement of [`spectrum_plus`].
pub fn spectrum_minus(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, LinalgError> {
    let mut ev: Vec<_> = linalg::eigenvalues(a)?
        .into_iter()
        .filter(|l| l.re < -SPECTRUM_TOL)
        .collect();
    sort_desc(&mut ev);
    Ok(ev)
}

/// Rank of `[lambda I - A | B]` over the complex field.
pub fn pbh_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: Complex<f64>) -> Result<usize, LinalgError> {
    let n = a.nrows();
    let m = b.ncols();
    let pencil = DMatrix::from_fn(n, n + m, |i, j| {
        if j < n {
            let diag = if i == j { lambda } else { Complex::new(0.0, 0.0) };
            diag - Complex::new(a[(i, j)], 0.0)
        } else {
            Complex::new(b[(i, j - n)], 0.0)
        }
    });
    Ok(linalg::rank_of(&linalg::complex_singular_values(&pencil)?))
}

pub fn hautus_test(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<HautusVerdict, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    let n = a.nrows();
    let checks = spectrum_plus(a)?
        .into_iter()
        .map(|eigenvalue| {
            Ok(HautusCheck {
                eigenvalue,
                rank: pbh_rank(a, b, eigenvalue)?,
                required: n,
            })
        })
        .collect::<Result<Vec<_>, LinalgError>>()?;
    Ok(HautusVerdict {
        stabilizable: checks.iter().all(|c| c.rank == c.required),
        checks,
    })
}

pub fn rank_verdict(joint: &DMatrix<f64>) -> Result<RankVerdict, LinalgError> {
    let singular_values = linalg::singular_values(joint)?;
    let rank = linalg::rank_of(&singular_values);
    Ok(RankVerdict {
        rank,
        full_row_rank: rank == joint.nrows(),
        singular_values,
    })
}

/// Rank of the Jacobian `[A | B]` of `f` at the origin.
pub fn full_row_rank_test(sys: &VectorFieldSpec) -> Result<RankVerdict, EvalError> {
    let lin = linearize(sys)?;
    Ok(rank_verdict(&lin.joint())?)
}

//! Damped Gauss–Newton root finding with minimum-norm (pseudoinverse) steps.
//!
//! Steps are `d = -J^+ r` with the pseudoinverse cut at `1e-8 * s_max`. Each
//! step is halved up to 20 times until the residual 2-norm decreases. When a
//! ball bound is set, every iterate is projected back onto it. Once the
//! residual meets the tolerance a few extra full-precision steps are taken, so
//! callers get roots accurate well beyond `tol` whenever Newton converges
//! quadratically.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::EvalError;
use crate::linalg::{inf_norm, pinv_solve, two_norm};
use crate::model::VectorFieldSpec;

const MAX_HALVINGS: usize = 20;
const STALL_DECREASE: f64 = 1e-12;
const STALL_WINDOW: usize = 5;
const POLISH_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Required `|residual|_inf`.
    pub tol: f64,
    pub max_iter: usize,
    /// Euclidean ball (about the origin) the iterates are projected onto.
    pub bound: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 100,
            bound: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_bound(mut self, bound: Option<f64>) -> Self {
        self.bound = bound;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Root {
    pub point: Vec<f64>,
    /// `|residual|_inf` at `point`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("no solution within tolerance (best residual {residual:e})")]
pub struct NoSolution {
    /// Best iterate seen; empty when even the start could not be evaluated.
    pub best: Vec<f64>,
    pub residual: f64,
    /// Set when the failure came from evaluation rather than the iteration.
    pub eval_error: Option<EvalError>,
}

fn project(w: &mut [f64], bound: Option<f64>) {
    if let Some(b) = bound {
        let norm = two_norm(w);
        if norm > b {
            let s = b / norm;
            w.iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Solves `residual(w) = 0`.
pub fn gauss_newton<R, J>(residual: R, jacobian: J, start: &[f64], opts: &SolveOptions) -> Result<Root, NoSolution>
where
    R: Fn(&[f64]) -> Result<Vec<f64>, EvalError>,
    J: Fn(&[f64]) -> Result<DMatrix<f64>, EvalError>,
{
    let mut w = start.to_vec();
    project(&mut w, opts.bound);
    let mut r = match residual(&w) {
        Ok(r) if finite(&r) => r,
        Ok(_) => {
            return Err(NoSolution {
                best: Vec::new(),
                residual: f64::INFINITY,
                eval_error: Some(EvalError::NonFinite),
            })
        }
        Err(e) => {
            return Err(NoSolution {
                best: Vec::new(),
                residual: f64::INFINITY,
                eval_error: Some(e),
            })
        }
    };
    let mut norm = two_norm(&r);
    let mut stalls = 0;
    let mut iterations = 0;

    // One damped step; returns whether it was accepted.
    let step = |w: &mut Vec<f64>, r: &mut Vec<f64>, norm: &mut f64| -> Result<bool, EvalError> {
        let jac = jacobian(w)?;
        let rhs = DVector::from_column_slice(r);
        let delta = pinv_solve(&jac, &rhs)?;
        let mut lambda = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let mut trial: Vec<f64> = w.iter().zip(delta.iter()).map(|(a, d)| a - lambda * d).collect();
            project(&mut trial, opts.bound);
            if let Ok(rt) = residual(&trial) {
                let nt = two_norm(&rt);
                if finite(&rt) && nt < *norm {
                    *w = trial;
                    *r = rt;
                    *norm = nt;
                    return Ok(true);
                }
            }
            lambda *= 0.5;
        }
        Ok(false)
    };

    loop {
        if inf_norm(&r) <= opts.tol {
            for _ in 0..POLISH_STEPS {
                if norm == 0.0 {
                    break;
                }
                match step(&mut w, &mut r, &mut norm) {
                    Ok(true) => {}
                    _ => break,
                }
            }
            return Ok(Root {
                residual: inf_norm(&r),
                point: w,
                iterations,
            });
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let before = norm;
        match step(&mut w, &mut r, &mut norm) {
            Ok(true) if (before - norm) / before >= STALL_DECREASE => stalls = 0,
            Ok(_) => stalls += 1,
            Err(e) => {
                return Err(NoSolution {
                    residual: inf_norm(&r),
                    best: w,
                    eval_error: Some(e),
                })
            }
        }
        if stalls >= STALL_WINDOW {
            break;
        }
    }
    Err(NoSolution {
        residual: inf_norm(&r),
        best: w,
        eval_error: None,
    })
}

/// Solves `f(w) = y` over the stacked point `w = (x, u)`.
pub fn solve_joint(sys: &VectorFieldSpec, y: &[f64], start: &[f64], opts: &SolveOptions) -> Result<Root, NoSolution> {
    gauss_newton(
        |w| {
            let mut v = sys.eval_joint(w)?;
            v.iter_mut().zip(y).for_each(|(a, b)| *a -= b);
            Ok(v)
        },
        |w| sys.jacobian_joint(w),
        start,
        opts,
    )
}

/// Solves `f(x, u) = target` in `u` with `x` held fixed.
pub fn solve_controls(
    sys: &VectorFieldSpec,
    x: &[f64],
    target: &[f64],
    start: &[f64],
    opts: &SolveOptions,
) -> Result<Root, NoSolution> {
    let n = sys.n();
    gauss_newton(
        |u| {
            let mut v = sys.eval(x, u)?;
            v.iter_mut().zip(target).for_each(|(a, b)| *a -= b);
            Ok(v)
        },
        |u| Ok(sys.jacobian(x, u)?.columns(n, sys.m()).into_owned()),
        start,
        opts,
    )
}

/// Deterministic restarts around `warm`, used once the warm start itself fails.
///
/// Shifting every coordinate moves iterates off points where the Jacobian
/// vanishes, such as `u = 0` for `u^3`.
pub fn fallback_starts(warm: &[f64], scale: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for c in [0.1, 0.5, 1.0] {
        for s in [1.0, -1.0] {
            out.push(warm.iter().map(|w| w + s * c * scale).collect());
        }
    }
    out
}

/// Runs `solve` from `warm`, then from [`fallback_starts`], keeping the first
/// success or else the attempt with the smallest residual.
pub fn solve_with_restarts<S>(warm: &[f64], scale: f64, mut solve: S) -> Result<Root, NoSolution>
where
    S: FnMut(&[f64]) -> Result<Root, NoSolution>,
{
    let mut best = match solve(warm) {
        Ok(root) => return Ok(root),
        Err(e) => e,
    };
    if warm.is_empty() {
        return Err(best);
    }
    for start in fallback_starts(warm, scale) {
        match solve(&start) {
            Ok(root) => return Ok(root),
            Err(e) if e.residual < best.residual => best = e,
            Err(_) => {}
        }
    }
    Err(best)
}

/// `f(w) - y` and its `inf`-norm; used when re-checking stored solutions.
pub fn joint_residual(sys: &VectorFieldSpec, w: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    let v = sys.eval_joint(w)?;
    Ok(v.iter()
        .zip(y)
        .fold(0.0, |acc, (a, b)| f64::max(acc, libm::fabs(a - b))))
}

pub(crate) fn zeros(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

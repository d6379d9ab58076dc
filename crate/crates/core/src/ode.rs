//! Dormand–Prince 5(4) with adaptive steps and dense output.

use alloc::vec::Vec;

use thiserror::Error;

use crate::error::EvalError;
use crate::linalg::two_norm;
use crate::model::Field;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense output weights.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

pub const DEFAULT_SAMPLES: usize = 200;
const MAX_STEPS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Uniform output times, including both ends.
    pub samples: usize,
    /// Stop (and flag) once `|x|_2` exceeds this.
    pub norm_limit: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            samples: DEFAULT_SAMPLES,
            norm_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("final time must be positive and finite (got {0})")]
    Horizon(f64),
    #[error("state has dimension {got}, field expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("step limit reached at t = {t}")]
    TooManySteps { t: f64 },
    #[error("field evaluation failed at the initial state: {0}")]
    Initial(EvalError),
}

/// Why a trajectory ended before the final time.
#[derive(Debug, Clone, PartialEq)]
pub enum Truncation {
    NonFiniteState { t: f64 },
    Evaluation { t: f64, error: EvalError },
    NormLimit { t: f64 },
}

impl Truncation {
    pub fn time(&self) -> f64 {
        match self {
            Truncation::NonFiniteState { t } | Truncation::Evaluation { t, .. } | Truncation::NormLimit { t } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub truncated: Option<Truncation>,
    pub steps: usize,
    pub rejected: usize,
    /// Largest state norm seen at any accepted step.
    pub peak_norm: f64,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().map(|s| s.as_slice()).unwrap_or(&[])
    }

    pub fn is_complete(&self) -> bool {
        self.truncated.is_none()
    }
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        if *c != 0.0 {
            out.iter_mut().zip(k.iter()).for_each(|(o, v)| *o += h * c * v);
        }
    }
    out
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], opts: &OdeOptions) -> f64 {
    let n = y0.len().max(1) as f64;
    let sum: f64 = y0
        .iter()
        .zip(y1)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = opts.abs_tol + opts.rel_tol * f64::max(libm::fabs(*a), libm::fabs(*b));
            (e / sc) * (e / sc)
        })
        .sum();
    libm::sqrt(sum / n)
}

fn scaled_norm(v: &[f64], y: &[f64], opts: &OdeOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let sum: f64 = v
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let sc = opts.abs_tol + opts.rel_tol * libm::fabs(*b);
            (a / sc) * (a / sc)
        })
        .sum();
    libm::sqrt(sum / n)
}

/// Initial step guess from the local scale of `y` and `f(y)`.
fn initial_step<F: Field>(field: &F, y: &[f64], f0: &[f64], t_final: f64, opts: &OdeOptions) -> f64 {
    let d0 = scaled_norm(y, y, opts);
    let d1 = scaled_norm(f0, y, opts);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = f64::min(h0, t_final);
    let y1 = axpy(y, h0, &[(1.0, f0)]);
    let h1 = match field.eval(&y1) {
        Ok(f1) => {
            let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
            let d2 = scaled_norm(&diff, y, opts) / h0;
            let m = f64::max(d1, d2);
            if m <= 1e-15 {
                f64::max(1e-6, h0 * 1e-3)
            } else {
                libm::pow(0.01 / m, 1.0 / 5.0)
            }
        }
        Err(_) => h0,
    };
    f64::min(f64::min(100.0 * h0, h1), t_final)
}

/// Integrates `x' = field(x)` on `[0, t_final]`, sampling the dense output at
/// `opts.samples` uniform times.
pub fn integrate<F: Field>(field: &F, x0: &[f64], t_final: f64, opts: &OdeOptions) -> Result<Trajectory, OdeError> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(OdeError::Horizon(t_final));
    }
    if x0.len() != field.dim() {
        return Err(OdeError::Dimension {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    let samples = opts.samples.max(2);
    let sample_time = |k: usize| t_final * k as f64 / (samples - 1) as f64;
    let mut traj = Trajectory {
        times: Vec::with_capacity(samples),
        states: Vec::with_capacity(samples),
        truncated: None,
        steps: 0,
        rejected: 0,
        peak_norm: two_norm(x0),
    };
    traj.times.push(0.0);
    traj.states.push(x0.to_vec());
    let mut next = 1;

    let mut y = x0.to_vec();
    let mut k1 = field.eval(&y).map_err(OdeError::Initial)?;
    let mut t = 0.0;
    let mut h = initial_step(field, &y, &k1, t_final, opts);
    let mut last_rejected = false;

    while next < samples {
        if traj.steps + traj.rejected >= MAX_STEPS {
            return Err(OdeError::TooManySteps { t });
        }
        if h < 1e-14 * f64::max(1.0, libm::fabs(t)) {
            return Err(OdeError::StepSizeUnderflow { t });
        }
        if t + h > t_final {
            h = t_final - t;
        }
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(k1.clone());
        let mut failure = None;
        for s in 1..7 {
            let terms: Vec<(f64, &[f64])> = (0..s).map(|j| (A[s][j], k[j].as_slice())).collect();
            let ys = axpy(&y, h, &terms);
            match field.eval(&ys) {
                Ok(v) if v.iter().all(|c| c.is_finite()) => k.push(v),
                Ok(_) => {
                    failure = Some(Truncation::NonFiniteState { t: t + C[s] * h });
                    break;
                }
                Err(error) => {
                    failure = Some(Truncation::Evaluation { t: t + C[s] * h, error });
                    break;
                }
            }
        }
        if let Some(trunc) = failure {
            // a failed stage is treated as a rejected step first; only a
            // persistent failure at tiny steps ends the trajectory
            if h > 1e-10 * f64::max(1.0, t) {
                traj.rejected += 1;
                h *= 0.25;
                last_rejected = true;
                continue;
            }
            traj.truncated = Some(trunc);
            return Ok(traj);
        }
        let terms: Vec<(f64, &[f64])> = (0..6).map(|j| (A[6][j], k[j].as_slice())).collect();
        let y1 = axpy(&y, h, &terms);
        let err: Vec<f64> = (0..y.len())
            .map(|i| h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>())
            .collect();
        let en = error_norm(&y, &y1, &err, opts);
        if !en.is_finite() {
            traj.rejected += 1;
            h *= 0.25;
            last_rejected = true;
            continue;
        }
        if en > 1.0 {
            traj.rejected += 1;
            h *= f64::max(0.2, 0.9 * libm::pow(en, -0.2));
            last_rejected = true;
            continue;
        }
        // accepted: emit samples inside (t, t + h]
        let t1 = if t_final - (t + h) <= 1e-12 * t_final {
            t_final
        } else {
            t + h
        };
        while next < samples && sample_time(next) <= t1 {
            let ts = if next == samples - 1 {
                t_final
            } else {
                sample_time(next)
            };
            let s = ((ts - t) / h).clamp(0.0, 1.0);
            let s1 = 1.0 - s;
            let state: Vec<f64> = (0..y.len())
                .map(|i| {
                    let ydiff = y1[i] - y[i];
                    let c2 = h * k[0][i] - ydiff;
                    let c3 = ydiff - h * k[6][i] - c2;
                    let c4 = h * (0..7).map(|j| D[j] * k[j][i]).sum::<f64>();
                    y[i] + s * (ydiff + s1 * (c2 + s * (c3 + s1 * c4)))
                })
                .collect();
            traj.times.push(ts);
            traj.states.push(state);
            next += 1;
        }
        traj.steps += 1;
        t = t1;
        y = y1;
        k1 = k.swap_remove(6);
        let norm = two_norm(&y);
        traj.peak_norm = f64::max(traj.peak_norm, norm);
        if opts.norm_limit.is_some_and(|lim| norm > lim) {
            traj.truncated = Some(Truncation::NormLimit { t });
            return Ok(traj);
        }
        let mut fac = if en == 0.0 { 10.0 } else { 0.9 * libm::pow(en, -0.2) };
        fac = fac.clamp(0.2, 10.0);
        if last_rejected {
            fac = f64::min(fac, 1.0);
        }
        last_rejected = false;
        h *= fac;
    }
    Ok(traj)
}

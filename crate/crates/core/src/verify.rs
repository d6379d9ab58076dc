//! Closed-loop verification: simulation, stability classification and the
//! spectrum of the closed loop at the origin.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::EvalError;
use crate::linalg::{eigenvalues, singular_values, two_norm};
use crate::model::{jacobian_fd, Field, VectorFieldSpec, FD_STEP};
use crate::ode::{integrate, OdeError, OdeOptions, Trajectory, Truncation};
use crate::synth::{ClosedLoop, FeedbackTable};

/// Final-to-initial norm ratio required for asymptotic evidence.
pub const DECAY_RATIO: f64 = 1e-4;
/// Looser ratio accepted for slow, monotone decay.
pub const SLOW_DECAY_RATIO: f64 = 0.5;
pub const MIN_R_SQUARED: f64 = 0.99;
/// Allowed relative spread of fitted slopes.
pub const SLOPE_SPREAD: f64 = 0.2;
/// A trajectory whose norm exceeds this multiple of its start has diverged.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Lipschitz estimates near the origin above this are flagged.
pub const LIPSCHITZ_FLAG: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("at least {0} initial states are required")]
    TooFewInitial(usize),
    #[error("radius must be positive and finite (got {0})")]
    Radius(f64),
    #[error("no trajectory completed")]
    NoTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
        }
    }
}

impl SimulateOptions {
    fn ode(&self, norm_limit: Option<f64>) -> OdeOptions {
        OdeOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            norm_limit,
            ..OdeOptions::default()
        }
    }
}

/// Integrates `x' = field(x)` from `x0` to `t_final`.
pub fn simulate<F: Field>(
    field: &F,
    x0: &[f64],
    t_final: f64,
    opts: &SimulateOptions,
) -> Result<Trajectory, VerifyError> {
    Ok(integrate(field, x0, t_final, &opts.ode(None))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityClass {
    Exponential,
    AsymptoticOnly,
    Diverged,
    Inconclusive,
}

impl StabilityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StabilityClass::Exponential => "exponential",
            StabilityClass::AsymptoticOnly => "asymptotic-only",
            StabilityClass::Diverged => "diverged",
            StabilityClass::Inconclusive => "inconclusive",
        }
    }

    pub fn is_stable(self) -> bool {
        matches!(self, StabilityClass::Exponential | StabilityClass::AsymptoticOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed,
    Diverged { t: f64 },
    Truncated { t: f64, reason: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub x0: Vec<f64>,
    pub outcome: Outcome,
    /// `|x(T)| / |x0|`.
    pub final_ratio: Option<f64>,
    /// Fitted slope of `log |x(t)|` on the second half.
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    /// Slopes on the third and fourth quarters.
    pub quarter_rates: Option<(f64, f64)>,
    /// Norm never increased over the fit window.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub classification: StabilityClass,
    /// Mean fitted decay exponent.
    pub rate: Option<f64>,
    /// Smallest fit quality over the trajectories.
    pub r_squared: Option<f64>,
    pub evidence: Vec<Evidence>,
    /// Finite-difference Lipschitz estimate near the origin.
    pub lipschitz: Option<f64>,
    /// Set when `lipschitz` exceeds [`LIPSCHITZ_FLAG`]; the flow may not be unique.
    pub lipschitz_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub radius: f64,
    pub num_initial: usize,
    pub t_final: f64,
    pub seed: u64,
    pub simulate: SimulateOptions,
}

impl ClassifyOptions {
    pub fn new(radius: f64, num_initial: usize, t_final: f64, seed: u64) -> Self {
        ClassifyOptions {
            radius,
            num_initial,
            t_final,
            seed,
            simulate: SimulateOptions::default(),
        }
    }
}

/// Least-squares slope and `R^2` of `ys` against `ts`.
pub fn linear_fit(ts: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = ts.len();
    if n < 3 {
        return None;
    }
    let mt = ts.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in ts.iter().zip(ys) {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { (sty * sty) / (stt * syy) };
    Some((slope, r2.clamp(0.0, 1.0)))
}

fn log_fit(tr: &Trajectory, from: f64, to: f64) -> Option<(f64, f64)> {
    let (ts, ys): (Vec<f64>, Vec<f64>) = tr
        .times
        .iter()
        .zip(&tr.states)
        .filter(|(t, _)| **t >= from - 1e-12 && **t <= to + 1e-12)
        .filter_map(|(t, x)| {
            let norm = two_norm(x);
            (norm > 0.0).then(|| (*t, libm::log(norm)))
        })
        .unzip();
    linear_fit(&ts, &ys)
}

fn evidence(x0: Vec<f64>, result: Result<Trajectory, VerifyError>, t_final: f64) -> Evidence {
    let mut ev = Evidence {
        x0,
        outcome: Outcome::Completed,
        final_ratio: None,
        rate: None,
        r_squared: None,
        quarter_rates: None,
        monotone: false,
    };
    let tr = match result {
        Ok(tr) => tr,
        Err(e) => {
            ev.outcome = Outcome::Failed { reason: e.to_string() };
            return ev;
        }
    };
    match &tr.truncated {
        None => {}
        Some(Truncation::NormLimit { t }) => {
            ev.outcome = Outcome::Diverged { t: *t };
            return ev;
        }
        Some(other) => {
            let reason = match other {
                Truncation::Evaluation { error, .. } => error.to_string(),
                _ => "non-finite state".to_string(),
            };
            ev.outcome = Outcome::Truncated {
                t: other.time(),
                reason,
            };
            return ev;
        }
    }
    let n0 = two_norm(&ev.x0);
    ev.final_ratio = Some(two_norm(tr.last()) / n0);
    if let Some((slope, r2)) = log_fit(&tr, t_final / 2.0, t_final) {
        ev.rate = Some(slope);
        ev.r_squared = Some(r2);
    }
    ev.quarter_rates = log_fit(&tr, t_final / 2.0, 0.75 * t_final)
        .zip(log_fit(&tr, 0.75 * t_final, t_final))
        .map(|(a, b)| (a.0, b.0));
    let window: Vec<f64> = tr
        .times
        .iter()
        .zip(&tr.states)
        .filter(|(t, _)| **t >= t_final / 2.0 - 1e-12)
        .map(|(_, x)| two_norm(x))
        .collect();
    ev.monotone = window.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    ev
}

fn within_spread(a: f64, b: f64) -> bool {
    libm::fabs(a - b) <= SLOPE_SPREAD * f64::max(libm::fabs(a), libm::fabs(b))
}

/// Seeded initial states on the sphere of the given radius.
pub fn initial_states(dim: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let norm = two_norm(&v);
            if norm > 1e-3 && norm <= 1.0 {
                break v.into_iter().map(|c| c * radius / norm).collect();
            }
        })
        .collect()
}

/// Largest FD Jacobian 2-norm at the origin and at `+-radius/100` along each axis.
pub fn lipschitz_estimate<F: Field>(field: &F, radius: f64) -> Option<f64> {
    let n = field.dim();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(alloc::vec![0.0; n]);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut p = alloc::vec![0.0; n];
            p[i] = s * radius / 100.0;
            points.push(p);
        }
    }
    let mut best: Option<f64> = None;
    for p in points {
        let Ok(j) = jacobian_fd(|x| field.eval(x), &p, FD_STEP) else {
            continue;
        };
        let Ok(sv) = singular_values(&j) else { continue };
        let norm = sv.iter().fold(0.0, |a: f64, &b| a.max(b));
        best = Some(best.map_or(norm, |b| b.max(norm)));
    }
    best
}

/// Simulates from seeded starts with `|x0| = radius` and classifies the decay.
pub fn classify_stability<F: Field>(field: &F, opts: &ClassifyOptions) -> Result<StabilityReport, VerifyError> {
    if opts.num_initial < 4 {
        return Err(VerifyError::TooFewInitial(4));
    }
    if !(opts.radius > 0.0 && opts.radius.is_finite()) {
        return Err(VerifyError::Radius(opts.radius));
    }
    let starts = initial_states(field.dim(), opts.num_initial, opts.radius, opts.seed);
    let evidence: Vec<Evidence> = starts
        .into_iter()
        .map(|x0| {
            let limit = DIVERGENCE_FACTOR * two_norm(&x0);
            let result =
                integrate(field, &x0, opts.t_final, &opts.simulate.ode(Some(limit))).map_err(VerifyError::from);
            evidence(x0, result, opts.t_final)
        })
        .collect();
    let lipschitz = lipschitz_estimate(field, opts.radius);
    let completed: Vec<&Evidence> = evidence.iter().filter(|e| e.outcome == Outcome::Completed).collect();
    let diverged = evidence.iter().any(|e| matches!(e.outcome, Outcome::Diverged { .. }));
    if completed.is_empty() && !diverged {
        return Err(VerifyError::NoTrajectory);
    }
    let rates: Vec<f64> = completed.iter().filter_map(|e| e.rate).collect();
    let rate = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    let r_squared = completed
        .iter()
        .filter_map(|e| e.r_squared)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))));

    let ratios_ok = |bound: f64| completed.iter().all(|e| e.final_ratio.is_some_and(|r| r <= bound));
    let exponential = ratios_ok(DECAY_RATIO)
        && rates.len() == completed.len()
        && rate.is_some_and(|r| r < 0.0)
        && r_squared.is_some_and(|r| r >= MIN_R_SQUARED)
        && rates.iter().all(|a| rates.iter().all(|b| within_spread(*a, *b)))
        && completed
            .iter()
            .all(|e| e.quarter_rates.is_some_and(|(a, b)| within_spread(a, b)));
    let asymptotic = ratios_ok(DECAY_RATIO) || (ratios_ok(SLOW_DECAY_RATIO) && completed.iter().all(|e| e.monotone));
    let classification = if diverged {
        StabilityClass::Diverged
    } else if exponential {
        StabilityClass::Exponential
    } else if asymptotic {
        StabilityClass::AsymptoticOnly
    } else {
        StabilityClass::Inconclusive
    };
    Ok(StabilityReport {
        classification,
        rate,
        r_squared,
        evidence,
        lipschitz_flag: lipschitz.is_some_and(|l| l > LIPSCHITZ_FLAG),
        lipschitz,
    })
}

/// Eigenvalues of the FD Jacobian (step `step`) of `field` at the origin,
/// sorted by real part, largest first.
pub fn spectrum_at_origin<F: Field>(field: &F, step: f64) -> Result<Vec<Complex<f64>>, EvalError> {
    let j = jacobian_fd(|x| field.eval(x), &alloc::vec![0.0; field.dim()], step)?;
    let mut ev = eigenvalues(&j)?;
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}

/// Eigenvalues of the FD Jacobian of `x -> f(x, u(x))` at the origin.
pub fn closed_loop_spectrum(sys: &VectorFieldSpec, feedback: &FeedbackTable) -> Result<Vec<Complex<f64>>, EvalError> {
    spectrum_at_origin(&ClosedLoop::new(sys, feedback), FD_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnField;
    use alloc::vec;

    fn scalar(f: fn(f64) -> f64) -> FnField<impl Fn(&[f64]) -> Result<Vec<f64>, EvalError>> {
        FnField::new(1, move |x: &[f64]| Ok(vec![f(x[0])]))
    }

    #[test]
    fn fit_recovers_line() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, -1.0, -3.0, -5.0];
        let (s, r2) = linear_fit(&ts, &ys).unwrap();
        assert!((s + 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&ts[..2], &ys[..2]).is_none());
    }

    #[test]
    fn scalar_classifications() {
        let opts = ClassifyOptions::new(0.5, 4, 20.0, 42);
        let r = classify_stability(&scalar(|x| -x), &opts).unwrap();
        assert_eq!(r.classification, StabilityClass::Exponential);
        assert!((r.rate.unwrap() + 1.0).abs() < 0.05);

        let r = classify_stability(&scalar(|x| x), &opts).unwrap();
        assert_eq!(r.classification, StabilityClass::Diverged);

        let r = classify_stability(&scalar(|x| -x * x * x), &opts).unwrap();
        assert_eq!(r.classification, StabilityClass::AsymptoticOnly);
    }

    #[test]
    fn starts_lie_on_sphere() {
        let s = initial_states(3, 8, 0.25, 7);
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|x| (two_norm(x) - 0.25).abs() < 1e-12));
        assert_eq!(s, initial_states(3, 8, 0.25, 7));
    }

    #[test]
    fn requires_enough_starts() {
        let opts = ClassifyOptions::new(0.5, 3, 20.0, 42);
        assert_eq!(
            classify_stability(&scalar(|x| -x), &opts).unwrap_err(),
            VerifyError::TooFewInitial(4)
        );
    }
}

//! Finite-resolution evidence for Brockett's openness condition and for
//! injectivity of a map on a grid.
//!
//! [`openness_probe`] tries to hit small targets `rho * d` with preimages
//! confined to a ball of radius `r`. A direction along which every scale
//! leaves a relative residual above 0.5 is reported as a witness. This is
//! numerical evidence, not a proof.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, GridError};
use crate::linalg::two_norm;
use crate::model::{Field, VectorFieldSpec};
use crate::solve::{solve_joint, SolveOptions};

/// Relative residual above which a target counts as unreachable.
pub const VIOLATION_RESIDUAL: f64 = 0.5;
/// Relative residual at or below which a target counts as reached.
pub const SOLVED_RESIDUAL: f64 = 1e-6;
pub const DEFAULT_MULTISTART: usize = 8;
pub const INJECTIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub radius: f64,
    /// Total number of target directions, at least `2n`.
    pub directions: usize,
    pub seed: u64,
    /// Starts per target: the origin plus `multistart - 1` random points.
    pub multistart: usize,
    pub max_iter: usize,
}

impl ProbeOptions {
    pub fn new(radius: f64, directions: usize, seed: u64) -> Self {
        ProbeOptions {
            radius,
            directions,
            seed,
            multistart: DEFAULT_MULTISTART,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpennessVerdict {
    NoViolationFound,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    /// Radius of the ball holding candidate preimages.
    pub domain: f64,
    /// Norm of the target.
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResult {
    pub direction: Vec<f64>,
    /// Best relative residual over all starts, one per scale; `None` when
    /// every start failed to evaluate.
    pub residuals: Vec<Option<f64>>,
}

impl DirectionResult {
    /// Largest relative residual over the resolved scales.
    pub fn worst(&self) -> f64 {
        self.residuals.iter().flatten().fold(0.0, |a, &b| f64::max(a, b))
    }

    /// Smallest relative residual, or `None` if some scale is unresolved.
    pub fn least(&self) -> Option<f64> {
        self.residuals
            .iter()
            .try_fold(f64::INFINITY, |a, r| r.map(|b| f64::min(a, b)))
    }

    pub fn is_violation(&self) -> bool {
        self.least().is_some_and(|r| r > VIOLATION_RESIDUAL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpennessReport {
    pub verdict: OpennessVerdict,
    /// Violating direction with the largest residual (earliest on ties).
    pub witness: Option<Vec<f64>>,
    pub scales: Vec<Scale>,
    pub directions: Vec<DirectionResult>,
    pub attempts_per_target: usize,
    /// Targets where every start failed to evaluate.
    pub unresolved: usize,
    /// Targets neither reached nor unresolved, below the violation threshold.
    pub partially_reached: usize,
}

impl OpennessReport {
    /// All violating directions, in probe order.
    pub fn violations(&self) -> impl Iterator<Item = &DirectionResult> {
        self.directions.iter().filter(|d| d.is_violation())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = two_norm(&v);
        if norm > 1e-3 && norm <= 1.0 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

fn ball_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if two_norm(&v) <= 1.0 {
            return v.into_iter().map(|c| c * radius).collect();
        }
    }
}

/// Axis directions `+e1, -e1, +e2, ...` followed by seeded random unit vectors.
pub fn probe_directions(n: usize, total: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(total.max(2 * n));
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[i] = s;
            out.push(d);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < total {
        out.push(unit_vector(&mut rng, n));
    }
    out
}

pub fn probe_scales(n: usize, radius: f64) -> Vec<Scale> {
    let mut out = Vec::new();
    for r in [radius, radius / 2.0, radius / 4.0] {
        out.push(Scale {
            domain: r,
            target: 0.1 * r,
        });
        if n > 1 {
            out.push(Scale {
                domain: r,
                target: 0.01 * r * r,
            });
        }
    }
    out
}

/// Best relative residual for `f(w) = y` over `multistart` starts in the ball,
/// or `None` if no start could be evaluated.
fn best_relative_residual(
    sys: &VectorFieldSpec,
    y: &[f64],
    scale: Scale,
    opts: &ProbeOptions,
    stream: u64,
) -> Option<f64> {
    let dim = sys.n() + sys.m();
    let ynorm = two_norm(y);
    let solve = SolveOptions {
        tol: 1e-7 * ynorm,
        max_iter: opts.max_iter,
        bound: Some(scale.domain),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream + 1));
    let mut best: Option<f64> = None;
    for k in 0..opts.multistart.max(1) {
        let start = if k == 0 {
            vec![0.0; dim]
        } else {
            ball_point(&mut rng, dim, scale.domain)
        };
        let point = match solve_joint(sys, y, &start, &solve) {
            Ok(root) => root.point,
            Err(e) if e.best.is_empty() => continue,
            Err(e) => e.best,
        };
        let Ok(value) = sys.eval_joint(&point) else { continue };
        let diff: Vec<f64> = value.iter().zip(y).map(|(a, b)| a - b).collect();
        let rel = two_norm(&diff) / ynorm;
        best = Some(best.map_or(rel, |b| f64::min(b, rel)));
        if rel <= SOLVED_RESIDUAL {
            break;
        }
    }
    best
}

pub fn openness_probe(sys: &VectorFieldSpec, radius: f64, directions: usize, seed: u64) -> OpennessReport {
    openness_probe_with(sys, &ProbeOptions::new(radius, directions, seed))
}

/// Probes openness of `f` at the origin.
///
/// `radius` must be positive; fewer than `2n` directions are raised to `2n`.
pub fn openness_probe_with(sys: &VectorFieldSpec, opts: &ProbeOptions) -> OpennessReport {
    let n = sys.n();
    let scales = probe_scales(n, opts.radius);
    let dirs = probe_directions(n, opts.directions, opts.seed);
    let mut unresolved = 0;
    let mut partially_reached = 0;
    let mut results = Vec::with_capacity(dirs.len());
    for (i, d) in dirs.into_iter().enumerate() {
        let residuals: Vec<Option<f64>> = scales
            .iter()
            .enumerate()
            .map(|(j, &scale)| {
                let y: Vec<f64> = d.iter().map(|c| c * scale.target).collect();
                best_relative_residual(sys, &y, scale, opts, (i * scales.len() + j) as u64)
            })
            .collect();
        for r in &residuals {
            match r {
                None => unresolved += 1,
                Some(r) if *r > SOLVED_RESIDUAL && *r <= VIOLATION_RESIDUAL => partially_reached += 1,
                _ => {}
            }
        }
        results.push(DirectionResult {
            direction: d,
            residuals,
        });
    }
    let mut witness: Option<(f64, usize)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(least) = r.least().filter(|_| r.is_violation()) {
            if witness.is_none_or(|(w, _)| least > w) {
                witness = Some((least, i));
            }
        }
    }
    OpennessReport {
        verdict: if witness.is_some() {
            OpennessVerdict::Violation
        } else {
            OpennessVerdict::NoViolationFound
        },
        witness: witness.map(|(_, i)| results[i].direction.clone()),
        scales,
        directions: results,
        attempts_per_target: opts.multistart.max(1),
        unresolved,
        partially_reached,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collision {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectivityReport {
    pub injective_on_grid: bool,
    /// Closest pair of images among distinct grid points.
    pub closest: Option<Collision>,
    pub per_axis: usize,
    pub spacing: f64,
    /// Grid points where the map could not be evaluated.
    pub failed: usize,
}

/// Brute-force closest pair of images over a uniform grid on `[-radius, radius]^n`.
pub fn injectivity_probe<F: Field>(map: &F, radius: f64, grid: usize) -> Result<InjectivityReport, GridError> {
    let g = Grid::new(map.dim(), grid, radius)?;
    let mut points = Vec::with_capacity(g.len());
    let mut failed = 0;
    for f in 0..g.len() {
        let p = g.point(f);
        match map.eval(&p) {
            Ok(v) if v.iter().all(|c| c.is_finite()) => points.push((p, v)),
            _ => failed += 1,
        }
    }
    let mut closest: Option<(f64, usize, usize)> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i]
                .1
                .iter()
                .zip(&points[j].1)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if closest.is_none_or(|(c, _, _)| d2 < c) {
                closest = Some((d2, i, j));
            }
        }
    }
    let closest = closest.map(|(d2, i, j)| Collision {
        a: points[i].0.clone(),
        b: points[j].0.clone(),
        distance: libm::sqrt(d2),
    });
    let threshold = INJECTIVITY_TOL * (1.0 + g.spacing());
    Ok(InjectivityReport {
        injective_on_grid: closest.as_ref().is_none_or(|c| c.distance > threshold),
        closest,
        per_axis: grid,
        spacing: g.spacing(),
        failed,
    })
}

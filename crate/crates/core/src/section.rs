//! Tabulated local sections: maps `alpha` with `f(alpha(y)) = y` near the
//! origin and `alpha(0) = 0`.
//!
//! Sections are not unique. The default branch comes from minimum-norm
//! Gauss–Newton steps warm-started from the nearest already solved node, which
//! picks one continuous branch deterministically. A section can instead be
//! anchored to a prescribed state part: with [`SectionBranch::StateInverseOf`]
//! the state part of `alpha(y)` is `G^{-1}(y)` and only the controls are solved.

use alloc::boxed::Box;
use alloc::vec::Vec;

use thiserror::Error;

use crate::error::EvalError;
use crate::grid::{sweep, Grid, GridError, NodeSolution};
use crate::linalg::two_norm;
use crate::model::{AutonomousField, VectorFieldSpec};
use crate::solve::{
    joint_residual, solve_controls, solve_joint, solve_with_restarts, zeros, NoSolution, Root, SolveOptions,
};
use crate::synth::{invert_map, InvertError};

/// Default ball radius for section solves, as a multiple of the grid radius.
pub const DOMAIN_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub enum SectionBranch {
    MinimumNorm,
    /// State part is the inverse of this field; `alpha_1^{-1} = G`.
    StateInverseOf(AutonomousField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Ball radius for `w = (x, u)`; `None` leaves the solve unconstrained.
    pub domain: Option<f64>,
    pub branch: SectionBranch,
}

impl SectionOptions {
    /// Defaults for a grid of the given radius.
    pub fn for_radius(radius: f64) -> Self {
        SectionOptions {
            tol: 1e-8,
            max_iter: 100,
            domain: Some(DOMAIN_FACTOR * radius),
            branch: SectionBranch::MinimumNorm,
        }
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            bound: self.domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionEntry {
    pub y: Vec<f64>,
    /// `(x, u)`; `None` if the node could not be solved.
    pub w: Option<Vec<f64>>,
    /// `|f(w) - y|_inf`, or the best residual reached for unsolved nodes.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionTable {
    n: usize,
    m: usize,
    grid: Grid,
    options: SectionOptions,
    entries: Vec<SectionEntry>,
    order: Vec<usize>,
    lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SectionError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("section incomplete: {} of {} nodes unsolved", .0.unsolved().len(), .0.len())]
    Incomplete(Box<SectionTable>),
}

impl SectionTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn options(&self) -> &SectionOptions {
        &self.options
    }

    pub fn tol(&self) -> f64 {
        self.options.tol
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in shell order (origin first).
    pub fn entries(&self) -> impl Iterator<Item = &SectionEntry> + '_ {
        self.order.iter().map(move |&f| &self.entries[f])
    }

    pub fn entry_at(&self, idx: &[i64]) -> &SectionEntry {
        &self.entries[self.grid.flat(idx)]
    }

    #[cfg(test)]
    pub(crate) fn entry_mut(&mut self, flat: usize) -> &mut SectionEntry {
        &mut self.entries[flat]
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(|e| e.w.is_some())
    }

    /// Target points of unsolved nodes, in shell order.
    pub fn unsolved(&self) -> Vec<&[f64]> {
        self.entries()
            .filter(|e| e.w.is_none())
            .map(|e| e.y.as_slice())
            .collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.w.is_some())
            .fold(0.0, |acc, e| f64::max(acc, e.residual))
    }

    /// Largest `|w_a - w_b| / |y_a - y_b|` over solved axis-adjacent nodes.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn values(&self) -> Vec<Option<Vec<f64>>> {
        self.entries.iter().map(|e| e.w.clone()).collect()
    }

    /// `alpha(y)` away from the nodes: multilinear interpolation of the table,
    /// then a Gauss–Newton polish on `f(w) = y` along the table's branch.
    pub fn evaluate(&self, sys: &VectorFieldSpec, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let values = self.values();
        let start = match self.grid.interpolate(&values, y) {
            Some(w) => w,
            None => {
                let f = self.grid.nearest_valued(&values, y).ok_or(EvalError::NoControl {
                    residual: f64::INFINITY,
                })?;
                values[f].clone().expect("valued")
            }
        };
        solve_node(sys, y, &start, &self.options, self.grid.radius())
            .map(|sol| sol.value)
            .map_err(|residual| EvalError::NoControl { residual })
    }

    pub(crate) fn recompute_lipschitz(&mut self) {
        let mut l: f64 = 0.0;
        for (a, b) in self.grid.adjacent_pairs() {
            if let (Some(wa), Some(wb)) = (&self.entries[a].w, &self.entries[b].w) {
                let dw: Vec<f64> = wa.iter().zip(wb).map(|(p, q)| p - q).collect();
                let dy: Vec<f64> = self.entries[a]
                    .y
                    .iter()
                    .zip(&self.entries[b].y)
                    .map(|(p, q)| p - q)
                    .collect();
                l = l.max(two_norm(&dw) / two_norm(&dy));
            }
        }
        self.lipschitz = l;
    }
}

/// Solves `f(w) = y` for one point by damped Gauss–Newton from `warm`.
pub fn solve_section_point(
    sys: &VectorFieldSpec,
    y: &[f64],
    warm: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<f64>, NoSolution> {
    solve_joint(sys, y, warm, opts).map(|r| r.point)
}

fn solve_node(
    sys: &VectorFieldSpec,
    y: &[f64],
    warm: &[f64],
    opts: &SectionOptions,
    scale: f64,
) -> Result<NodeSolution, f64> {
    let n = sys.n();
    let so = opts.solve_options();
    let root: Result<Root, NoSolution> = match &opts.branch {
        SectionBranch::MinimumNorm => solve_with_restarts(warm, scale, |s| solve_joint(sys, y, s, &so)),
        SectionBranch::StateInverseOf(g) => {
            let x = match invert_map(g, y, opts.tol, Some(&warm[..n])) {
                Ok(x) => x,
                Err(InvertError::NoConvergence { residual }) => return Err(residual),
                Err(_) => return Err(f64::INFINITY),
            };
            let uo = SolveOptions { bound: None, ..so };
            solve_with_restarts(&warm[n..], scale, |s| solve_controls(sys, &x, y, s, &uo)).map(|r| {
                let mut point = x.clone();
                point.extend_from_slice(&r.point);
                Root { point, ..r }
            })
        }
    };
    match root {
        Ok(r) => {
            let residual = joint_residual(sys, &r.point, y).unwrap_or(f64::INFINITY);
            if residual <= opts.tol {
                Ok(NodeSolution {
                    value: r.point,
                    residual,
                    aux: Vec::new(),
                })
            } else {
                Err(residual)
            }
        }
        Err(e) => Err(e.residual),
    }
}

/// Tabulates a section over `[-radius, radius]^n` on a `grid^n` node grid.
///
/// On failure the partial table is returned inside [`SectionError::Incomplete`].
pub fn build_section(
    sys: &VectorFieldSpec,
    radius: f64,
    grid: usize,
    opts: &SectionOptions,
) -> Result<SectionTable, SectionError> {
    let grid = Grid::new(sys.n(), grid, radius)?;
    let (n, m) = (sys.n(), sys.m());
    let origin = NodeSolution {
        value: zeros(n + m),
        residual: joint_residual(sys, &zeros(n + m), &zeros(n)).unwrap_or(0.0),
        aux: Vec::new(),
    };
    let nodes = sweep(&grid, origin, |y, warm, _| solve_node(sys, y, warm, opts, radius));
    let entries = nodes
        .into_iter()
        .enumerate()
        .map(|(f, node)| SectionEntry {
            y: grid.point(f),
            w: node.value,
            residual: node.residual,
        })
        .collect();
    let mut table = SectionTable {
        n,
        m,
        order: grid.shell_order(),
        grid,
        options: opts.clone(),
        entries,
        lipschitz: 0.0,
    };
    table.recompute_lipschitz();
    if table.is_complete() {
        Ok(table)
    } else {
        Err(SectionError::Incomplete(Box::new(table)))
    }
}

/// Recomputes `max |f(alpha(y)) - y|_inf` over the solved nodes.
pub fn check_section(sys: &VectorFieldSpec, table: &SectionTable) -> f64 {
    table
        .entries
        .iter()
        .filter_map(|e| e.w.as_ref().map(|w| (w, &e.y)))
        .map(|(w, y)| joint_residual(sys, w, y).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::corpus_system;
    use alloc::vec;

    #[test]
    fn origin_is_pinned() {
        let sys = corpus_system("cubic_scalar").unwrap();
        let w = solve_section_point(&sys, &[0.0], &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
        let t = build_section(&sys, 0.5, 5, &SectionOptions::for_radius(0.5)).unwrap();
        assert_eq!(t.entry_at(&[0]).w.as_deref(), Some(&[0.0, 0.0][..]));
        assert_eq!(t.entries().next().unwrap().y, vec![0.0]);
    }

    #[test]
    fn cubic_point_solve_meets_residual() {
        let sys = corpus_system("cubic_scalar").unwrap();
        let opts = SolveOptions::default().with_tol(1e-10);
        let w = solve_section_point(&sys, &[0.5], &[0.0, 0.0], &opts).unwrap();
        assert!((w[0] + w[1] * w[1] * w[1] - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn integrator_axis_target_has_no_solution_in_small_ball() {
        let sys = corpus_system("brockett_integrator").unwrap();
        let opts = SolveOptions::default().with_bound(Some(0.5));
        for warm in [[0.0; 5], [0.3, -0.2, 0.1, 0.0, 0.1], [-0.2, 0.2, 0.0, 0.2, -0.2]] {
            let err = solve_section_point(&sys, &[0.0, 0.0, 0.1], &warm, &opts).unwrap_err();
            assert!(err.residual > 0.01, "{}", err.residual);
        }
    }

    #[test]
    fn check_section_detects_perturbation() {
        let sys = corpus_system("cubic_scalar").unwrap();
        let mut t = build_section(&sys, 0.5, 21, &SectionOptions::for_radius(0.5)).unwrap();
        assert!(check_section(&sys, &t) <= t.tol());
        let f = t.grid().flat(&[4]);
        t.entry_mut(f).w.as_mut().unwrap()[0] += 0.1;
        assert!(check_section(&sys, &t) > 0.01);
    }

    #[test]
    fn empty_check_is_zero() {
        let sys = corpus_system("cubic_scalar").unwrap();
        let mut t = build_section(&sys, 0.5, 3, &SectionOptions::for_radius(0.5)).unwrap();
        for e in t.entries.iter_mut() {
            e.w = None;
        }
        assert_eq!(check_section(&sys, &t), 0.0);
    }
}

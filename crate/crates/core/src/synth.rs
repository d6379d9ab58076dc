//! Feedback and composition-symbol synthesis.
//!
//! A continuous stationary feedback stabilizes `x' = f(x, u)` exactly when it
//! has the form `u = proj_2 . alpha . (proj_1 . alpha)^{-1}` for a local
//! section `alpha` whose state part `alpha_1` is a homeomorphism with
//! `x' = alpha_1^{-1}(x)` stable; the closed loop is then `alpha_1^{-1}`
//! itself. Fixing a stable target `G = alpha_1^{-1}` therefore fixes the
//! branch, and the feedback is obtained by solving `f(x, u) = G(x)` for `u`
//! pointwise ([`synthesize_feedback`]). [`feedback_from_section`] goes the
//! other way, from a tabulated section to its feedback.
//!
//! Composition symbols relax the problem: `f(h(x)) = g(x)` is solved over all
//! `n + m` arguments ([`synthesize_composition_symbol`]).

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::error::EvalError;
use crate::grid::{sweep, Grid, GridError, NodeSolution};
use crate::linalg::{determinant, eigenvalues, inf_norm};
use crate::model::{AutonomousField, Field, FnField, ModelError, VectorFieldSpec};
use crate::section::SectionTable;
use crate::solve::{
    gauss_newton, joint_residual, solve_controls, solve_joint, solve_with_restarts, zeros, SolveOptions,
};

/// `|det J(0)|` below this is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;
const INVERT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvertError {
    #[error("map is singular at the origin (|det J(0)| = {0:e})")]
    SingularAtOrigin(f64),
    #[error("Newton iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Solves `map(y) = x` by Newton's method, without the origin check.
fn newton_invert<F: Field>(map: &F, x: &[f64], tol: f64, start: Option<&[f64]>) -> Result<Vec<f64>, InvertError> {
    let n = map.dim();
    let start = start.map(|s| s.to_vec()).unwrap_or_else(|| zeros(n));
    let opts = SolveOptions {
        tol,
        max_iter: INVERT_MAX_ITER,
        bound: None,
    };
    gauss_newton(
        |y| {
            let mut v = map.eval(y)?;
            v.iter_mut().zip(x).for_each(|(a, b)| *a -= b);
            Ok(v)
        },
        |y| map.jacobian(y),
        &start,
        &opts,
    )
    .map(|r| r.point)
    .map_err(|e| match e.eval_error {
        Some(err) if e.best.is_empty() => InvertError::Eval(err),
        _ => InvertError::NoConvergence { residual: e.residual },
    })
}

fn det_at_origin<F: Field>(map: &F) -> Result<f64, InvertError> {
    let j = map.jacobian(&zeros(map.dim()))?;
    let det = determinant(&j);
    if libm::fabs(det) < SINGULAR_DET {
        Err(InvertError::SingularAtOrigin(libm::fabs(det)))
    } else {
        Ok(det)
    }
}

/// Finds `y` with `map(y) = x` to `|.|_inf <= tol`, starting at `start` (or 0).
///
/// The map must be locally invertible at the origin.
pub fn invert_map<F: Field>(map: &F, x: &[f64], tol: f64, start: Option<&[f64]>) -> Result<Vec<f64>, InvertError> {
    det_at_origin(map)?;
    newton_invert(map, x, tol, start)
}

/// True iff every eigenvalue of `J^{-1}` has real part below `-1e-9`, where `J`
/// is the Jacobian of `alpha_1` at the origin.
pub fn check_exponential_condition(alpha1_jacobian: &DMatrix<f64>) -> Result<bool, InvertError> {
    let det = determinant(alpha1_jacobian);
    if libm::fabs(det) < SINGULAR_DET {
        return Err(InvertError::SingularAtOrigin(libm::fabs(det)));
    }
    let inv = alpha1_jacobian
        .clone()
        .try_inverse()
        .ok_or(InvertError::SingularAtOrigin(libm::fabs(det)))?;
    let ev = eigenvalues(&inv).map_err(EvalError::from)?;
    Ok(ev.iter().all(|l| l.re < -1e-9))
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackTarget {
    /// Closed loop prescribed as `G`.
    Field(AutonomousField),
    /// Closed loop is `alpha_1^{-1}` for a tabulated section.
    SectionInverse(Box<SectionTable>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackEntry {
    pub x: Vec<f64>,
    pub u: Option<Vec<f64>>,
    /// `|f(x, u) - G(x)|_inf`, or the best residual reached.
    pub residual: f64,
    /// `alpha_1^{-1}(x)` for section-derived tables.
    pub preimage: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    n: usize,
    m: usize,
    grid: Grid,
    opts: SolveOptions,
    target: FeedbackTarget,
    entries: Vec<FeedbackEntry>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolEntry {
    pub x: Vec<f64>,
    /// `h(x) = (state part, control part)`.
    pub h: Option<Vec<f64>>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    n: usize,
    m: usize,
    grid: Grid,
    tol: f64,
    target: AutonomousField,
    entries: Vec<SymbolEntry>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("system has no control inputs")]
    NoControls,
    #[error("target: {0}")]
    Target(#[from] ModelError),
    #[error("target dimension {target} does not match state dimension {n}")]
    Dimension { target: usize, n: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Invert(#[from] InvertError),
    #[error("section table is incomplete")]
    SectionIncomplete,
    #[error("not synthesizable: {} of {} nodes unsolved", .0.unsolved().len(), .0.len())]
    NotSynthesizable(Box<FeedbackTable>),
    #[error("no composition symbol: {} of {} nodes unsolved", .0.unsolved().len(), .0.len())]
    SymbolNotSynthesizable(Box<SymbolTable>),
}

macro_rules! table_accessors {
    ($t:ty, $e:ty, $field:ident) => {
        impl $t {
            pub fn n(&self) -> usize {
                self.n
            }

            pub fn m(&self) -> usize {
                self.m
            }

            pub fn grid(&self) -> &Grid {
                &self.grid
            }

            pub fn len(&self) -> usize {
                self.entries.len()
            }

            pub fn is_empty(&self) -> bool {
                self.entries.is_empty()
            }

            /// Entries in shell order (origin first).
            pub fn entries(&self) -> impl Iterator<Item = &$e> + '_ {
                self.order.iter().map(move |&f| &self.entries[f])
            }

            pub fn entry_at(&self, idx: &[i64]) -> &$e {
                &self.entries[self.grid.flat(idx)]
            }

            pub fn is_complete(&self) -> bool {
                self.entries.iter().all(|e| e.$field.is_some())
            }

            /// Grid points of unsolved nodes, in shell order.
            pub fn unsolved(&self) -> Vec<&[f64]> {
                self.entries()
                    .filter(|e| e.$field.is_none())
                    .map(|e| e.x.as_slice())
                    .collect()
            }

            pub fn max_residual(&self) -> f64 {
                self.entries
                    .iter()
                    .filter(|e| e.$field.is_some())
                    .fold(0.0, |acc, e| f64::max(acc, e.residual))
            }
        }
    };
}

table_accessors!(FeedbackTable, FeedbackEntry, u);
table_accessors!(SymbolTable, SymbolEntry, h);

impl SymbolTable {
    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn target(&self) -> &AutonomousField {
        &self.target
    }
}

impl FeedbackTable {
    pub fn tol(&self) -> f64 {
        self.opts.tol
    }

    pub fn target(&self) -> &FeedbackTarget {
        &self.target
    }

    /// The closed loop the table was built for, evaluated at `x`.
    pub fn target_at(&self, sys: &VectorFieldSpec, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        match &self.target {
            FeedbackTarget::Field(g) => g.eval(x),
            FeedbackTarget::SectionInverse(section) => self.section_preimage(sys, section, x),
        }
    }

    fn section_preimage(
        &self,
        sys: &VectorFieldSpec,
        section: &SectionTable,
        x: &[f64],
    ) -> Result<Vec<f64>, EvalError> {
        let pre: Vec<Option<Vec<f64>>> = self.entries.iter().map(|e| e.preimage.clone()).collect();
        let warm = self.grid.interpolate(&pre, x);
        let alpha1 = state_part(sys, section);
        newton_invert(&alpha1, x, self.opts.tol, warm.as_deref()).map_err(|e| match e {
            InvertError::Eval(e) => e,
            InvertError::NoConvergence { residual } | InvertError::SingularAtOrigin(residual) => {
                EvalError::NoControl { residual }
            }
        })
    }

    /// The feedback at an arbitrary state: warm start from the table, then a
    /// pointwise solve of `f(x, u) = G(x)`.
    pub fn control_at(&self, sys: &VectorFieldSpec, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let values: Vec<Option<Vec<f64>>> = self.entries.iter().map(|e| e.u.clone()).collect();
        let mut warm = match self.grid.interpolate(&values, x) {
            Some(u) => u,
            None => self
                .grid
                .nearest_valued(&values, x)
                .and_then(|f| values[f].clone())
                .unwrap_or_else(|| zeros(self.m)),
        };
        let target = match &self.target {
            FeedbackTarget::Field(g) => g.eval(x)?,
            FeedbackTarget::SectionInverse(section) => {
                let y = self.section_preimage(sys, section, x)?;
                warm = section.evaluate(sys, &y)?[self.n..].to_vec();
                y
            }
        };
        // near the origin an absolute tolerance would swamp f itself
        let scale = inf_norm(&target);
        let opts = SolveOptions {
            tol: self.opts.tol * f64::min(1.0, scale),
            bound: None,
            ..self.opts
        };
        match solve_with_restarts(&warm, self.grid.radius(), |s| solve_controls(sys, x, &target, s, &opts)) {
            Ok(r) => Ok(r.point),
            Err(e) if !e.best.is_empty() && e.residual <= self.opts.tol && e.residual <= 1e-8 * scale => Ok(e.best),
            Err(e) => Err(EvalError::NoControl { residual: e.residual }),
        }
    }
}

fn state_part<'a>(
    sys: &'a VectorFieldSpec,
    section: &'a SectionTable,
) -> FnField<impl Fn(&[f64]) -> Result<Vec<f64>, EvalError> + 'a> {
    let n = sys.n();
    FnField::new(n, move |y: &[f64]| section.evaluate(sys, y).map(|w| w[..n].to_vec()))
}

/// Closed loop `x' = f(x, u(x))` with `u` from a feedback table.
pub struct ClosedLoop<'a> {
    pub system: &'a VectorFieldSpec,
    pub feedback: &'a FeedbackTable,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(system: &'a VectorFieldSpec, feedback: &'a FeedbackTable) -> Self {
        ClosedLoop { system, feedback }
    }
}

impl Field for ClosedLoop<'_> {
    fn dim(&self) -> usize {
        self.system.n()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let u = self.feedback.control_at(self.system, x)?;
        self.system.eval(x, &u)
    }
}

fn check_target(sys: &VectorFieldSpec, target: &AutonomousField) -> Result<(), SynthError> {
    if target.dim() != sys.n() {
        return Err(SynthError::Dimension {
            target: target.dim(),
            n: sys.n(),
        });
    }
    target.check_vanishes_at_origin()?;
    Ok(())
}

fn control_residual(sys: &VectorFieldSpec, x: &[f64], u: &[f64], target: &[f64]) -> f64 {
    match sys.eval(x, u) {
        Ok(v) => v
            .iter()
            .zip(target)
            .fold(0.0, |acc, (a, b)| f64::max(acc, libm::fabs(a - b))),
        Err(_) => f64::INFINITY,
    }
}

fn finish_feedback(
    sys: &VectorFieldSpec,
    grid: Grid,
    opts: &SolveOptions,
    target: FeedbackTarget,
    nodes: Vec<crate::grid::SweepNode>,
) -> Result<FeedbackTable, SynthError> {
    let entries = nodes
        .into_iter()
        .enumerate()
        .map(|(f, node)| FeedbackEntry {
            x: grid.point(f),
            u: node.value,
            residual: node.residual,
            preimage: node.aux.filter(|a| !a.is_empty()),
        })
        .collect();
    let table = FeedbackTable {
        n: sys.n(),
        m: sys.m(),
        order: grid.shell_order(),
        grid,
        opts: *opts,
        target,
        entries,
    };
    if table.is_complete() {
        Ok(table)
    } else {
        Err(SynthError::NotSynthesizable(Box::new(table)))
    }
}

/// Tabulates `u(x)` with `f(x, u(x)) = G(x)` over `[-radius, radius]^n`, `u(0) = 0`.
pub fn synthesize_feedback(
    sys: &VectorFieldSpec,
    target: &AutonomousField,
    radius: f64,
    grid: usize,
    opts: &SolveOptions,
) -> Result<FeedbackTable, SynthError> {
    if sys.m() == 0 {
        return Err(SynthError::NoControls);
    }
    check_target(sys, target)?;
    let grid = Grid::new(sys.n(), grid, radius)?;
    let (n, m) = (sys.n(), sys.m());
    let uo = SolveOptions { bound: None, ..*opts };
    let origin = NodeSolution {
        value: zeros(m),
        residual: control_residual(
            sys,
            &zeros(n),
            &zeros(m),
            &target.eval(&zeros(n)).map_err(ModelError::OriginEval)?,
        ),
        aux: Vec::new(),
    };
    let nodes = sweep(&grid, origin, |x, warm, _| {
        let g = target.eval(x).map_err(|_| f64::INFINITY)?;
        let root = solve_with_restarts(warm, radius, |s| solve_controls(sys, x, &g, s, &uo)).map_err(|e| e.residual)?;
        let residual = control_residual(sys, x, &root.point, &g);
        if residual <= opts.tol {
            Ok(NodeSolution {
                value: root.point,
                residual,
                aux: Vec::new(),
            })
        } else {
            Err(residual)
        }
    });
    finish_feedback(sys, grid, opts, FeedbackTarget::Field(target.clone()), nodes)
}

/// Feedback `u = proj_2 . alpha . alpha_1^{-1}` from a complete section table.
///
/// For each node `y = alpha_1^{-1}(x)` is found by Newton's method on the
/// section's state part, `u` is read from `alpha(y)`, and then polished on
/// `f(x, u) = y`.
pub fn feedback_from_section(
    sys: &VectorFieldSpec,
    section: &SectionTable,
    radius: f64,
    grid: usize,
    opts: &SolveOptions,
) -> Result<FeedbackTable, SynthError> {
    if sys.m() == 0 {
        return Err(SynthError::NoControls);
    }
    if !section.is_complete() {
        return Err(SynthError::SectionIncomplete);
    }
    let grid = Grid::new(sys.n(), grid, radius)?;
    let (n, m) = (sys.n(), sys.m());
    let alpha1 = state_part(sys, section);
    det_at_origin(&alpha1)?;
    let uo = SolveOptions { bound: None, ..*opts };
    let origin = NodeSolution {
        value: zeros(m),
        residual: control_residual(sys, &zeros(n), &zeros(m), &zeros(n)),
        aux: zeros(n),
    };
    let nodes = sweep(&grid, origin, |x, warm_u, warm_y| {
        let y = newton_invert(&alpha1, x, opts.tol, Some(warm_y)).map_err(|e| match e {
            InvertError::NoConvergence { residual } => residual,
            _ => f64::INFINITY,
        })?;
        let from_section = section
            .evaluate(sys, &y)
            .map(|w| w[n..].to_vec())
            .unwrap_or_else(|_| warm_u.to_vec());
        let root = solve_with_restarts(&from_section, radius, |s| solve_controls(sys, x, &y, s, &uo))
            .map_err(|e| e.residual)?;
        let residual = control_residual(sys, x, &root.point, &y);
        if residual <= opts.tol {
            Ok(NodeSolution {
                value: root.point,
                residual,
                aux: y,
            })
        } else {
            Err(residual)
        }
    });
    finish_feedback(
        sys,
        grid,
        opts,
        FeedbackTarget::SectionInverse(Box::new(section.clone())),
        nodes,
    )
}

/// Tabulates a stationary symbol `h` with `f(h(x)) = g(x)`, solving over all
/// `n + m` arguments of `f`. `opts.bound` limits `|h(x)|`.
pub fn synthesize_composition_symbol(
    sys: &VectorFieldSpec,
    target: &AutonomousField,
    radius: f64,
    grid: usize,
    opts: &SolveOptions,
) -> Result<SymbolTable, SynthError> {
    check_target(sys, target)?;
    let grid = Grid::new(sys.n(), grid, radius)?;
    let (n, m) = (sys.n(), sys.m());
    let origin = NodeSolution {
        value: zeros(n + m),
        residual: inf_norm(&sys.eval_joint(&zeros(n + m)).unwrap_or_default()),
        aux: Vec::new(),
    };
    let nodes = sweep(&grid, origin, |x, warm, _| {
        let g = target.eval(x).map_err(|_| f64::INFINITY)?;
        let root = solve_with_restarts(warm, radius, |s| solve_joint(sys, &g, s, opts)).map_err(|e| e.residual)?;
        let residual = joint_residual(sys, &root.point, &g).unwrap_or(f64::INFINITY);
        if residual <= opts.tol {
            Ok(NodeSolution {
                value: root.point,
                residual,
                aux: Vec::new(),
            })
        } else {
            Err(residual)
        }
    });
    let entries = nodes
        .into_iter()
        .enumerate()
        .map(|(f, node)| SymbolEntry {
            x: grid.point(f),
            h: node.value,
            residual: node.residual,
        })
        .collect();
    let table = SymbolTable {
        n,
        m,
        order: grid.shell_order(),
        grid,
        tol: opts.tol,
        target: target.clone(),
        entries,
    };
    if table.is_complete() {
        Ok(table)
    } else {
        Err(SynthError::SymbolNotSynthesizable(Box::new(table)))
    }
}

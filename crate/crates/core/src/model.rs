//! Control systems `x' = f(x, u)`, autonomous fields, Jacobians and the example corpus.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::error::EvalError;
use crate::expr::{Expr, ParseError, Var};
use crate::linalg::inf_norm;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Shift applied when a difference stencil centred on a singular point fails.
const FD_SHIFT: f64 = 1e-7;
/// Tolerance on `|f(0, 0)|` and `|G(0)|`.
pub const ORIGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("component {component}: {source}")]
    Parse {
        component: usize,
        #[source]
        source: ParseError,
    },
    #[error("component {component} references undeclared variable {var}")]
    Unbound { component: usize, var: Var },
    #[error("expected {expected} components, got {got}")]
    ComponentCount { expected: usize, got: usize },
    #[error("state dimension must be at least 1")]
    EmptyState,
    #[error("field does not vanish at the origin (|f(0,0)| = {0:e})")]
    NonzeroAtOrigin(f64),
    #[error("evaluation at the origin failed: {0}")]
    OriginEval(EvalError),
}

/// Anything that maps `R^dim` to `R^dim`: targets, closed loops, inverse maps.
pub trait Field {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError>;

    /// Jacobian at `x`; central differences unless overridden.
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        jacobian_fd(|p| self.eval(p), x, FD_STEP)
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        (**self).eval(x)
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        (**self).jacobian(x)
    }
}

/// Adapts a closure into a [`Field`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, EvalError>,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, EvalError>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        (self.f)(x)
    }
}

fn check_len(v: &[f64], expected: usize) -> Result<(), EvalError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(EvalError::Dimension { expected, got: v.len() })
    }
}

/// Central-difference Jacobian with per-coordinate step `step * max(1, |x_i|)`.
pub fn jacobian_fd<F>(map: F, x: &[f64], step: f64) -> Result<DMatrix<f64>, EvalError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, EvalError>,
{
    let mut probe = x.to_vec();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = step * f64::max(1.0, libm::fabs(x[j]));
        probe[j] = x[j] + h;
        let plus = map(&probe)?;
        probe[j] = x[j] - h;
        let minus = map(&probe)?;
        probe[j] = x[j];
        columns.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect());
    }
    let rows = columns
        .first()
        .map_or_else(|| map(x).map(|v| v.len()), |c| Ok(c.len()))?;
    Ok(DMatrix::from_fn(rows, x.len(), |i, j| columns[j][i]))
}

/// One Jacobian column by differences, falling back to one-sided and then
/// shifted one-sided stencils when the central one cannot be evaluated.
fn fd_column<F>(map: &F, x: &[f64], j: usize, step: f64) -> Result<Vec<f64>, EvalError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, EvalError>,
{
    let h = step * f64::max(1.0, libm::fabs(x[j]));
    let at = |offset: f64| {
        let mut p = x.to_vec();
        p[j] += offset;
        map(&p)
    };
    let diff =
        |a: Vec<f64>, b: Vec<f64>, width: f64| -> Vec<f64> { a.iter().zip(&b).map(|(p, m)| (p - m) / width).collect() };
    if let (Ok(p), Ok(m)) = (at(h), at(-h)) {
        return Ok(diff(p, m, 2.0 * h));
    }
    if let (Ok(p), Ok(c)) = (at(h), at(0.0)) {
        return Ok(diff(p, c, h));
    }
    let p = at(FD_SHIFT + h)?;
    let c = at(FD_SHIFT)?;
    Ok(diff(p, c, h))
}

/// Precomputed symbolic partials; `None` where differentiation is not needed.
#[derive(Debug, Clone, PartialEq)]
struct Partials {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl Partials {
    fn new(components: &[Expr], vars: &[Var]) -> Self {
        let entries = components
            .iter()
            .flat_map(|c| vars.iter().map(move |v| c.derivative(*v)))
            .collect();
        Partials {
            rows: components.len(),
            cols: vars.len(),
            entries,
        }
    }

    /// Symbolic Jacobian, with any column that fails to evaluate replaced by differences.
    fn jacobian<F>(&self, x: &[f64], u: &[f64], joint: &[f64], map: F) -> Result<DMatrix<f64>, EvalError>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>, EvalError>,
    {
        let mut jac = DMatrix::zeros(self.rows, self.cols);
        let mut failed = vec![false; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                match self.entries[i * self.cols + j].eval(x, u) {
                    Ok(v) if v.is_finite() => jac[(i, j)] = v,
                    _ => failed[j] = true,
                }
            }
        }
        for j in (0..self.cols).filter(|&j| failed[j]) {
            let col = fd_column(&map, joint, j, FD_STEP)?;
            for (i, v) in col.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        Ok(jac)
    }
}

fn joint_vars(n: usize, m: usize) -> Vec<Var> {
    (0..n).map(Var::State).chain((0..m).map(Var::Control)).collect()
}

/// A control system `x' = f(x, u)` with `f(0, 0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSpec {
    name: String,
    n: usize,
    m: usize,
    components: Vec<Expr>,
    partials: Partials,
}

impl VectorFieldSpec {
    pub fn new(name: impl Into<String>, n: usize, m: usize, components: Vec<Expr>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::EmptyState);
        }
        if components.len() != n {
            return Err(ModelError::ComponentCount {
                expected: n,
                got: components.len(),
            });
        }
        for (i, c) in components.iter().enumerate() {
            if let Some(var) = c.unbound_var(n, m) {
                return Err(ModelError::Unbound { component: i, var });
            }
        }
        let partials = Partials::new(&components, &joint_vars(n, m));
        let sys = VectorFieldSpec {
            name: name.into(),
            n,
            m,
            components,
            partials,
        };
        let at_origin = sys.eval(&vec![0.0; n], &vec![0.0; m]).map_err(ModelError::OriginEval)?;
        let size = inf_norm(&at_origin);
        if size.is_nan() || size > ORIGIN_TOL {
            return Err(ModelError::NonzeroAtOrigin(size));
        }
        Ok(sys)
    }

    pub fn parse(name: impl Into<String>, n: usize, m: usize, texts: &[&str]) -> Result<Self, ModelError> {
        let components = crate::expr::parse_all(texts.iter().copied())
            .map_err(|(component, source)| ModelError::Parse { component, source })?;
        Self::new(name, n, m, components)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Control dimension.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_len(x, self.n)?;
        check_len(u, self.m)?;
        self.components
            .iter()
            .map(|c| c.eval(x, u).map_err(EvalError::from))
            .collect()
    }

    /// Evaluates at the stacked point `w = (x, u)`.
    pub fn eval_joint(&self, w: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_len(w, self.n + self.m)?;
        let (x, u) = w.split_at(self.n);
        self.eval(x, u)
    }

    /// `n x (n+m)` Jacobian `[df/dx | df/du]` at `(x, u)`.
    pub fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        check_len(x, self.n)?;
        check_len(u, self.m)?;
        let mut w = x.to_vec();
        w.extend_from_slice(u);
        self.partials.jacobian(x, u, &w, |p| self.eval_joint(p))
    }

    pub fn jacobian_joint(&self, w: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        check_len(w, self.n + self.m)?;
        let (x, u) = w.split_at(self.n);
        self.jacobian(x, u)
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let components: Vec<Expr> = self
            .components
            .iter()
            .map(|c| {
                Expr::Bin(
                    crate::expr::BinOp::Mul,
                    alloc::boxed::Box::new(Expr::Num(factor)),
                    alloc::boxed::Box::new(c.clone()),
                )
            })
            .collect();
        let partials = Partials::new(&components, &joint_vars(self.n, self.m));
        VectorFieldSpec {
            name: self.name.clone(),
            n: self.n,
            m: self.m,
            components,
            partials,
        }
    }
}

/// Linearization `A = df/dx (0,0)`, `B = df/du (0,0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Linearization {
    /// `[A | B]`.
    pub fn joint(&self) -> DMatrix<f64> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        DMatrix::from_fn(n, n + m, |i, j| if j < n { self.a[(i, j)] } else { self.b[(i, j - n)] })
    }
}

pub fn linearize(sys: &VectorFieldSpec) -> Result<Linearization, EvalError> {
    let (n, m) = (sys.n(), sys.m());
    let j = sys.jacobian(&vec![0.0; n], &vec![0.0; m])?;
    Ok(Linearization {
        a: j.columns(0, n).into_owned(),
        b: j.columns(n, m).into_owned(),
    })
}

/// An autonomous field `x' = G(x)` given by expressions in `x1..xn`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutonomousField {
    n: usize,
    components: Vec<Expr>,
    partials: Partials,
}

impl AutonomousField {
    pub fn new(components: Vec<Expr>) -> Result<Self, ModelError> {
        let n = components.len();
        if n == 0 {
            return Err(ModelError::EmptyState);
        }
        for (i, c) in components.iter().enumerate() {
            if let Some(var) = c.unbound_var(n, 0) {
                return Err(ModelError::Unbound { component: i, var });
            }
        }
        let partials = Partials::new(&components, &joint_vars(n, 0));
        Ok(AutonomousField {
            n,
            components,
            partials,
        })
    }

    pub fn parse(texts: &[&str]) -> Result<Self, ModelError> {
        let components = crate::expr::parse_all(texts.iter().copied())
            .map_err(|(component, source)| ModelError::Parse { component, source })?;
        Self::new(components)
    }

    /// `G(x) = -x`.
    pub fn negative_identity(n: usize) -> Self {
        let components = (0..n)
            .map(|i| Expr::Neg(alloc::boxed::Box::new(Expr::Var(Var::State(i)))))
            .collect();
        Self::new(components).expect("well-formed")
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Checks `|G(0)| <= 1e-12`.
    pub fn check_vanishes_at_origin(&self) -> Result<(), ModelError> {
        let v = self.eval(&vec![0.0; self.n]).map_err(ModelError::OriginEval)?;
        let size = inf_norm(&v);
        if size <= ORIGIN_TOL {
            Ok(())
        } else {
            Err(ModelError::NonzeroAtOrigin(size))
        }
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.components.iter().map(|c| c.to_string()).collect()
    }
}

impl Field for AutonomousField {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_len(x, self.n)?;
        self.components
            .iter()
            .map(|c| c.eval(x, &[]).map_err(EvalError::from))
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        check_len(x, self.n)?;
        self.partials.jacobian(x, &[], x, |p| self.eval(p))
    }
}

/// Closed loop `x' = f(x, u(x))` for a feedback given by expressions in `x1..xn`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitClosedLoop {
    pub system: VectorFieldSpec,
    pub feedback: Vec<Expr>,
}

impl ExplicitClosedLoop {
    pub fn new(system: VectorFieldSpec, feedback: Vec<Expr>) -> Result<Self, ModelError> {
        if feedback.len() != system.m() {
            return Err(ModelError::ComponentCount {
                expected: system.m(),
                got: feedback.len(),
            });
        }
        for (i, c) in feedback.iter().enumerate() {
            if let Some(var) = c.unbound_var(system.n(), 0) {
                return Err(ModelError::Unbound { component: i, var });
            }
        }
        Ok(ExplicitClosedLoop { system, feedback })
    }

    pub fn control(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.feedback
            .iter()
            .map(|c| c.eval(x, &[]).map_err(EvalError::from))
            .collect()
    }
}

impl Field for ExplicitClosedLoop {
    fn dim(&self) -> usize {
        self.system.n()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let u = self.control(x)?;
        self.system.eval(x, &u)
    }
}

/// Names of the built-in example systems, in registry order.
pub const CORPUS_NAMES: [&str; 4] = ["state_only", "brockett_integrator", "cubic_scalar", "example_2d"];

/// The four built-in example systems.
pub fn corpus() -> Vec<VectorFieldSpec> {
    CORPUS_NAMES
        .iter()
        .map(|name| corpus_system(name).expect("registered"))
        .collect()
}

pub fn corpus_system(name: &str) -> Option<VectorFieldSpec> {
    let (n, m, texts): (usize, usize, &[&str]) = match name {
        // Controls have no effect.
        "state_only" => (1, 1, &["x1"]),
        // Nonholonomic integrator; fails Brockett's condition.
        "brockett_integrator" => (3, 2, &["u1", "u2", "x1*u2 - x2*u1"]),
        "cubic_scalar" => (1, 1, &["x1 + u1^3"]),
        "example_2d" => (2, 1, &["x1^2 + x2^2 + x2", "x1*x2 + x2^2 + u1^3"]),
        _ => return None,
    };
    Some(VectorFieldSpec::parse(name.to_string(), n, m, texts).expect("corpus systems are well-formed"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        libm::fabs(a - b) <= tol
    }

    #[test]
    fn eval_examples() {
        let b = corpus_system("brockett_integrator").unwrap();
        assert_eq!(b.eval(&[1.0, 2.0, 0.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0, -2.0]);
        let c = corpus_system("cubic_scalar").unwrap();
        assert_eq!(c.eval(&[0.5], &[-1.0]).unwrap(), vec![-0.5]);
        let s = corpus_system("state_only").unwrap();
        assert_eq!(s.eval(&[1.0], &[99.0]).unwrap(), vec![1.0]);
        for sys in corpus() {
            let v = sys.eval(&vec![0.0; sys.n()], &vec![0.0; sys.m()]).unwrap();
            assert!(inf_norm(&v) <= ORIGIN_TOL, "{}", sys.name());
        }
        assert!(matches!(
            c.eval(&[0.5, 1.0], &[0.0]),
            Err(EvalError::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn corpus_registry() {
        let names: Vec<_> = corpus().iter().map(|s| s.name().to_string()).collect();
        assert_eq!(names, CORPUS_NAMES);
        let b = corpus_system("brockett_integrator").unwrap();
        assert_eq!((b.n(), b.m()), (3, 2));
        let e = corpus_system("example_2d").unwrap();
        assert_eq!((e.n(), e.m()), (2, 1));
        assert!(corpus_system("nope").is_none());
    }

    #[test]
    fn rejects_bad_systems() {
        assert!(matches!(
            VectorFieldSpec::parse("off", 1, 1, &["x1 + 1"]),
            Err(ModelError::NonzeroAtOrigin(_))
        ));
        assert!(matches!(
            VectorFieldSpec::parse("wide", 1, 1, &["x2"]),
            Err(ModelError::Unbound { component: 0, .. })
        ));
        assert!(matches!(
            VectorFieldSpec::parse("short", 2, 0, &["x1"]),
            Err(ModelError::ComponentCount { expected: 2, got: 1 })
        ));
        assert!(matches!(
            VectorFieldSpec::parse("pole", 1, 0, &["1/x1"]),
            Err(ModelError::OriginEval(_))
        ));
    }

    #[test]
    fn linearizations() {
        let l = linearize(&corpus_system("cubic_scalar").unwrap()).unwrap();
        assert_eq!(l.a, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(l.b, DMatrix::from_element(1, 1, 0.0));

        let l = linearize(&corpus_system("state_only").unwrap()).unwrap();
        assert_eq!((l.a[(0, 0)], l.b[(0, 0)]), (1.0, 0.0));

        let l = linearize(&corpus_system("brockett_integrator").unwrap()).unwrap();
        assert_eq!(l.a, DMatrix::zeros(3, 3));
        assert_eq!(l.b, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert_eq!(l.joint().ncols(), 5);
    }

    #[test]
    fn singular_symbolic_partial_falls_back_to_differences() {
        // d/dx1 of cbrt(x1)^3 is singular symbolically at 0, but the map is x1.
        let sys = VectorFieldSpec::parse("smooth", 1, 0, &["cbrt(x1)^3"]).unwrap();
        let l = linearize(&sys).unwrap();
        assert!(close(l.a[(0, 0)], 1.0, 1e-6));
    }

    #[test]
    fn fd_jacobians() {
        let id = FnField::new(3, |x: &[f64]| Ok(x.to_vec()));
        let j = id.jacobian(&[0.3, -2.0, 5.0]).unwrap();
        assert!((j - DMatrix::identity(3, 3)).abs().max() <= 1e-9);

        let cubic = corpus_system("cubic_scalar").unwrap();
        let cl = ExplicitClosedLoop::new(cubic, vec![Expr::parse("cbrt(-2*x1)").unwrap()]).unwrap();
        let j = cl.jacobian(&[0.1]).unwrap();
        assert!(close(j[(0, 0)], -1.0, 1e-5));

        let ex = corpus_system("example_2d").unwrap();
        let cl = ExplicitClosedLoop::new(ex, vec![Expr::parse("cbrt(-2*x2 - x1/2 - x1*x2 - x2^2)").unwrap()]).unwrap();
        let j = cl.jacobian(&[0.0, 0.0]).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -2.0]);
        assert!((j - want).abs().max() <= 1e-5);
    }

    #[test]
    fn autonomous_field_checks() {
        let g = AutonomousField::parse(&["x1^2 + x2^2 + x2", "-2*x2 - x1/2"]).unwrap();
        g.check_vanishes_at_origin().unwrap();
        let j = g.jacobian(&[0.0, 0.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -2.0]));
        assert!(AutonomousField::parse(&["u1"]).is_err());
        let off = AutonomousField::parse(&["x1 + 1"]).unwrap();
        assert!(off.check_vanishes_at_origin().is_err());
        let neg = AutonomousField::negative_identity(2);
        assert_eq!(neg.eval(&[1.0, -2.0]).unwrap(), vec![-1.0, 2.0]);
    }
}

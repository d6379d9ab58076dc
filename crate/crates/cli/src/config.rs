//! Run configuration files.
//!
//! ```text
//! # comment
//! [system]
//! system = cubic_scalar        # a built-in system, or inline:
//! n = 3
//! m = 2
//! f1 = u1
//! f2 = u2
//! f3 = x1*u2 - x2*u1
//!
//! [target]
//! g1 = -x1                     # default gi = -xi
//!
//! [solver]
//! radius = 0.5
//! grid = 21
//!
//! [simulate]
//! t_final = 20
//! ```
//!
//! Lines before the first header belong to `[system]`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nlstab_core::expr::Expr;
use nlstab_core::model::{corpus_system, ModelError, CORPUS_NAMES};
use nlstab_core::{AutonomousField, VectorFieldSpec};
use thiserror::Error;

/// Tolerance for `f(0, 0) = 0` and `G(0) = 0`.
pub const ORIGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn err<T>(line: Option<usize>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub radius: f64,
    pub grid: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub seed: u64,
    pub multistart: usize,
    /// Openness probe directions, at least `2n`.
    pub directions: usize,
    /// Ball bounding section and symbol solves; `None` is unbounded.
    pub domain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub t_final: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub num_initial: usize,
    /// Norm of the initial states used for classification.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: VectorFieldSpec,
    pub target: AutonomousField,
    /// False when the target is the default `-x`.
    pub target_given: bool,
    pub solver: SolverConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    System,
    Target,
    Solver,
    Simulate,
}

impl Section {
    fn parse(name: &str) -> Option<Section> {
        match name {
            "system" => Some(Section::System),
            "target" => Some(Section::Target),
            "solver" => Some(Section::Solver),
            "simulate" => Some(Section::Simulate),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Section::System => "system",
            Section::Target => "target",
            Section::Solver => "solver",
            Section::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
struct Raw {
    sections: BTreeMap<Section, BTreeMap<String, Entry>>,
    headers: BTreeMap<Section, usize>,
}

impl Raw {
    fn get(&self, section: Section, key: &str) -> Option<&Entry> {
        self.sections.get(&section).and_then(|s| s.get(key))
    }

    fn keys(&self, section: Section) -> impl Iterator<Item = (&String, &Entry)> {
        self.sections.get(&section).into_iter().flatten()
    }

    fn header(&self, section: Section) -> Option<usize> {
        self.headers.get(&section).copied()
    }
}

fn lex(text: &str) -> Result<Raw, ConfigError> {
    let mut raw = Raw::default();
    let mut current = Section::System;
    for (i, full) in text.lines().enumerate() {
        let line = i + 1;
        let content = full.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return err(Some(line), format!("malformed section header `{content}`"));
            };
            let Some(section) = Section::parse(name.trim()) else {
                return err(Some(line), format!("unknown section `[{}]`", name.trim()));
            };
            if raw.headers.insert(section, line).is_some() {
                return err(Some(line), format!("section `[{}]` appears twice", section.name()));
            }
            current = section;
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return err(Some(line), format!("expected `key = value`, got `{content}`"));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return err(Some(line), "missing key");
        }
        if value.is_empty() {
            return err(Some(line), format!("missing value for `{key}`"));
        }
        let entries = raw.sections.entry(current).or_default();
        if let Some(prev) = entries.get(key) {
            return err(Some(line), format!("`{key}` already set on line {}", prev.line));
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(raw)
}

fn number<T: std::str::FromStr>(e: &Entry, key: &str) -> Result<T, ConfigError> {
    e.value
        .parse()
        .or_else(|_| err(Some(e.line), format!("`{key}`: cannot parse `{}`", e.value)))
}

fn indexed_key(key: &str, prefix: char) -> Option<usize> {
    let rest = key.strip_prefix(prefix)?;
    if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

/// Collects `prefix1..prefixN` expressions; every index in `1..=count` must be present.
fn components(raw: &Raw, section: Section, prefix: char, count: usize) -> Result<Vec<(Expr, usize)>, ConfigError> {
    let mut out = Vec::with_capacity(count);
    for i in 1..=count {
        let key = format!("{prefix}{i}");
        let Some(e) = raw.get(section, &key) else {
            return err(raw.header(section), format!("[{}] is missing `{key}`", section.name()));
        };
        let expr = Expr::parse(&e.value).or_else(|p| err(Some(e.line), format!("`{key}`: {p}")))?;
        out.push((expr, e.line));
    }
    Ok(out)
}

fn model_error(lines: &[usize], header: Option<usize>, e: ModelError) -> ConfigError {
    let line = match &e {
        ModelError::Parse { component, .. } | ModelError::Unbound { component, .. } => lines.get(*component).copied(),
        _ => header,
    };
    ConfigError {
        line,
        message: e.to_string(),
    }
}

fn system(raw: &Raw) -> Result<VectorFieldSpec, ConfigError> {
    let header = raw.header(Section::System);
    if let Some(e) = raw.get(Section::System, "system") {
        for (key, other) in raw.keys(Section::System) {
            if key != "system" {
                return err(
                    Some(other.line),
                    format!("`{key}` cannot be combined with a built-in system"),
                );
            }
        }
        return corpus_system(&e.value).ok_or_else(|| ConfigError {
            line: Some(e.line),
            message: format!("unknown system `{}` (built-in: {})", e.value, CORPUS_NAMES.join(", ")),
        });
    }
    let Some(n_entry) = raw.get(Section::System, "n") else {
        return err(
            header,
            "[system] needs `system = <name>` or an inline definition with `n`, `m`, `f1..fn`",
        );
    };
    let n: usize = number(n_entry, "n")?;
    if n == 0 {
        return err(Some(n_entry.line), "`n` must be at least 1");
    }
    let m: usize = match raw.get(Section::System, "m") {
        Some(e) => number(e, "m")?,
        None => return err(header, "[system] is missing `m`"),
    };
    for (key, e) in raw.keys(Section::System) {
        let known = matches!(key.as_str(), "n" | "m" | "name") || indexed_key(key, 'f').is_some_and(|i| i <= n);
        if !known {
            return err(Some(e.line), format!("unknown [system] key `{key}`"));
        }
    }
    let name = raw.get(Section::System, "name").map_or("inline", |e| e.value.as_str());
    let comps = components(raw, Section::System, 'f', n)?;
    let lines: Vec<usize> = comps.iter().map(|c| c.1).collect();
    for (i, (expr, line)) in comps.iter().enumerate() {
        let Ok(v) = expr.eval(&vec![0.0; n], &vec![0.0; m]) else {
            continue;
        };
        if expr.unbound_var(n, m).is_none() && (v.is_nan() || v.abs() > ORIGIN_TOL) {
            return err(
                Some(*line),
                format!("f{} does not vanish at the origin (f{}(0, 0) = {v:e})", i + 1, i + 1),
            );
        }
    }
    VectorFieldSpec::new(name, n, m, comps.into_iter().map(|c| c.0).collect())
        .map_err(|e| model_error(&lines, header, e))
}

fn target(raw: &Raw, n: usize) -> Result<(AutonomousField, bool), ConfigError> {
    let header = raw.header(Section::Target);
    let mut given = false;
    for (key, e) in raw.keys(Section::Target) {
        match indexed_key(key, 'g') {
            Some(i) if i <= n => given = true,
            Some(_) => return err(Some(e.line), format!("`{key}` exceeds the state dimension {n}")),
            None => return err(Some(e.line), format!("unknown [target] key `{key}`")),
        }
    }
    if !given {
        return Ok((AutonomousField::negative_identity(n), false));
    }
    let comps = components(raw, Section::Target, 'g', n)?;
    let lines: Vec<usize> = comps.iter().map(|c| c.1).collect();
    for (i, (expr, line)) in comps.iter().enumerate() {
        let Ok(v) = expr.eval(&vec![0.0; n], &[]) else { continue };
        if expr.unbound_var(n, 0).is_none() && (v.is_nan() || v.abs() > ORIGIN_TOL) {
            return err(
                Some(*line),
                format!("g{} does not vanish at the origin (g{}(0) = {v:e})", i + 1, i + 1),
            );
        }
    }
    let g =
        AutonomousField::new(comps.into_iter().map(|c| c.0).collect()).map_err(|e| model_error(&lines, header, e))?;
    g.check_vanishes_at_origin()
        .map_err(|e| model_error(&lines, header, e))?;
    Ok((g, true))
}

fn positive(e: &Entry, key: &str) -> Result<f64, ConfigError> {
    let v: f64 = number(e, key)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        err(Some(e.line), format!("`{key}` must be positive and finite (got {v})"))
    }
}

fn at_least(e: &Entry, key: &str, min: usize) -> Result<usize, ConfigError> {
    let v: usize = number(e, key)?;
    if v >= min {
        Ok(v)
    } else {
        err(Some(e.line), format!("`{key}` must be at least {min} (got {v})"))
    }
}

fn solver(raw: &Raw, n: usize) -> Result<SolverConfig, ConfigError> {
    let mut s = SolverConfig {
        radius: 0.5,
        grid: 21,
        tol: 1e-8,
        max_iter: 100,
        fd_step: 1e-6,
        seed: 42,
        multistart: 8,
        directions: 2 * n + 8,
        domain: None,
    };
    let mut domain: Option<Option<f64>> = None;
    for (key, e) in raw.keys(Section::Solver) {
        match key.as_str() {
            "radius" => s.radius = positive(e, key)?,
            "grid" => {
                s.grid = at_least(e, key, 3)?;
                if s.grid.is_multiple_of(2) {
                    return err(
                        Some(e.line),
                        format!("`grid` must be odd so the origin is a node (got {})", s.grid),
                    );
                }
            }
            "tol" => s.tol = positive(e, key)?,
            "max_iter" => s.max_iter = at_least(e, key, 1)?,
            "fd_step" => s.fd_step = positive(e, key)?,
            "seed" => s.seed = number(e, key)?,
            "multistart" => s.multistart = at_least(e, key, 1)?,
            "directions" => s.directions = at_least(e, key, 2 * n)?,
            "domain" => {
                domain = Some(if e.value == "none" {
                    None
                } else {
                    Some(positive(e, key)?)
                });
            }
            _ => return err(Some(e.line), format!("unknown [solver] key `{key}`")),
        }
    }
    s.domain = domain.unwrap_or(Some(10.0 * s.radius));
    Ok(s)
}

fn simulate(raw: &Raw, solver_radius: f64) -> Result<SimulateConfig, ConfigError> {
    let mut s = SimulateConfig {
        t_final: 20.0,
        rel_tol: 1e-9,
        abs_tol: 1e-12,
        num_initial: 8,
        radius: solver_radius / 2.0,
    };
    for (key, e) in raw.keys(Section::Simulate) {
        match key.as_str() {
            "t_final" => s.t_final = positive(e, key)?,
            "rel_tol" => s.rel_tol = positive(e, key)?,
            "abs_tol" => s.abs_tol = positive(e, key)?,
            "num_initial" => s.num_initial = at_least(e, key, 4)?,
            "radius" => s.radius = positive(e, key)?,
            _ => return err(Some(e.line), format!("unknown [simulate] key `{key}`")),
        }
    }
    Ok(s)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let raw = lex(text)?;
        let system = system(&raw)?;
        let (target, target_given) = target(&raw, system.n())?;
        let solver = solver(&raw, system.n())?;
        let simulate = simulate(&raw, solver.radius)?;
        Ok(RunConfig {
            system,
            target,
            target_given,
            solver,
            simulate,
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).or_else(|e| err(None, format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_name_with_defaults() {
        let c = RunConfig::parse("system = cubic_scalar\n").unwrap();
        assert_eq!(c.system.name(), "cubic_scalar");
        assert!(!c.target_given);
        assert_eq!(c.target.to_strings(), vec!["-x1"]);
        assert_eq!(c.solver.grid, 21);
        assert_eq!(c.solver.radius, 0.5);
        assert_eq!(c.solver.domain, Some(5.0));
        assert_eq!(c.solver.directions, 10);
        assert_eq!(c.simulate.radius, 0.25);
        assert_eq!(c.simulate.num_initial, 8);
    }

    #[test]
    fn even_grid_is_rejected() {
        let e = RunConfig::parse("[system]\nsystem = cubic_scalar\n[solver]\ngrid = 10\n").unwrap_err();
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn indexed_keys() {
        assert_eq!(indexed_key("f12", 'f'), Some(12));
        assert_eq!(indexed_key("f0", 'f'), None);
        assert_eq!(indexed_key("f01", 'f'), None);
        assert_eq!(indexed_key("g1", 'f'), None);
    }
}

//! Uniform box grids with an odd node count per axis, so the origin is a node.
//!
//! Nodes are processed in radial shells: shell `k` holds the nodes whose
//! largest index magnitude is `k`. Within a shell, nodes are ordered
//! lexicographically by index. A node's warm start is taken from the nearest
//! solved node of an earlier shell, so results never depend on the order in
//! which one shell is processed.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid must be odd and at least 3 per axis (got {0})")]
    Count(usize),
    #[error("radius must be positive and finite (got {0})")]
    Radius(f64),
    #[error("grid dimension {0} is not supported (1..=3)")]
    Dimension(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    per_axis: usize,
    radius: f64,
}

impl Grid {
    pub fn new(dim: usize, per_axis: usize, radius: f64) -> Result<Grid, GridError> {
        if per_axis < 3 || per_axis.is_multiple_of(2) {
            return Err(GridError::Count(per_axis));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GridError::Radius(radius));
        }
        if dim == 0 || dim > 3 {
            return Err(GridError::Dimension(dim));
        }
        Ok(Grid { dim, per_axis, radius })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn half(&self) -> i64 {
        (self.per_axis as i64 - 1) / 2
    }

    pub fn spacing(&self) -> f64 {
        self.radius / self.half() as f64
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flat(&self, idx: &[i64]) -> usize {
        let h = self.half();
        idx.iter()
            .fold(0usize, |acc, &i| acc * self.per_axis + (i + h) as usize)
    }

    pub fn index(&self, mut flat: usize) -> Vec<i64> {
        let h = self.half();
        let mut idx = vec![0i64; self.dim];
        for slot in idx.iter_mut().rev() {
            *slot = (flat % self.per_axis) as i64 - h;
            flat /= self.per_axis;
        }
        idx
    }

    pub fn origin(&self) -> usize {
        self.flat(&vec![0; self.dim])
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let h = self.half() as f64;
        self.index(flat)
            .into_iter()
            .map(|i| self.radius * i as f64 / h)
            .collect()
    }

    pub fn shell(&self, flat: usize) -> i64 {
        self.index(flat).iter().map(|i| i.abs()).max().unwrap_or(0)
    }

    /// All nodes by shell, then lexicographically by index.
    pub fn shell_order(&self) -> Vec<usize> {
        let mut keyed: Vec<(i64, Vec<i64>, usize)> =
            (0..self.len()).map(|f| (self.shell(f), self.index(f), f)).collect();
        keyed.sort();
        keyed.into_iter().map(|(_, _, f)| f).collect()
    }

    /// Nearest node (Euclidean, ties lexicographic) in an earlier shell for
    /// which `solved` holds.
    pub fn nearest_solved(&self, flat: usize, solved: &[bool]) -> Option<usize> {
        let center = self.index(flat);
        let shell = center.iter().map(|i| i.abs()).max().unwrap_or(0);
        let h = self.half();
        let mut window = 1i64;
        loop {
            let mut best: Option<(i64, Vec<i64>, usize)> = None;
            let lo: Vec<i64> = center.iter().map(|c| (c - window).max(-h)).collect();
            let hi: Vec<i64> = center.iter().map(|c| (c + window).min(h)).collect();
            let mut cur = lo.clone();
            'walk: loop {
                let s = cur.iter().map(|i| i.abs()).max().unwrap_or(0);
                if s < shell {
                    let f = self.flat(&cur);
                    if solved[f] {
                        let d2: i64 = cur.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
                        let better = match &best {
                            None => true,
                            Some((bd, bi, _)) => (d2, &cur) < (*bd, bi),
                        };
                        if better {
                            best = Some((d2, cur.clone(), f));
                        }
                    }
                }
                // odometer increment over [lo, hi]
                for k in (0..self.dim).rev() {
                    if cur[k] < hi[k] {
                        cur[k] += 1;
                        continue 'walk;
                    }
                    cur[k] = lo[k];
                }
                break;
            }
            if let Some((d2, _, f)) = best {
                if d2 <= (window + 1) * (window + 1) {
                    return Some(f);
                }
            }
            if window > 2 * h {
                return best.map(|(_, _, f)| f);
            }
            window += 1;
        }
    }

    /// Pairs of nodes adjacent along one axis.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let h = self.half();
        let mut out = Vec::new();
        for f in 0..self.len() {
            let idx = self.index(f);
            for k in 0..self.dim {
                if idx[k] < h {
                    let mut nb = idx.clone();
                    nb[k] += 1;
                    out.push((f, self.flat(&nb)));
                }
            }
        }
        out
    }

    /// Multilinear interpolation of per-node vectors at `p` (clamped to the box).
    /// `None` if any corner of the enclosing cell has no value.
    pub fn interpolate(&self, values: &[Option<Vec<f64>>], p: &[f64]) -> Option<Vec<f64>> {
        let h = self.half();
        let spacing = self.spacing();
        let mut base = vec![0i64; self.dim];
        let mut frac = vec![0.0; self.dim];
        for k in 0..self.dim {
            let s = (p[k] / spacing).clamp(-(h as f64), h as f64);
            let lo = (libm::floor(s) as i64).min(h - 1);
            base[k] = lo;
            frac[k] = s - lo as f64;
        }
        let mut acc: Option<Vec<f64>> = None;
        for corner in 0..(1usize << self.dim) {
            let mut idx = base.clone();
            let mut weight = 1.0;
            for k in 0..self.dim {
                if corner >> k & 1 == 1 {
                    idx[k] += 1;
                    weight *= frac[k];
                } else {
                    weight *= 1.0 - frac[k];
                }
            }
            if weight == 0.0 {
                continue;
            }
            let v = values[self.flat(&idx)].as_ref()?;
            let a = acc.get_or_insert_with(|| vec![0.0; v.len()]);
            a.iter_mut().zip(v).for_each(|(a, b)| *a += weight * b);
        }
        acc
    }

    /// Nearest node to `p` (clamped to the box) that has a value.
    pub fn nearest_valued(&self, values: &[Option<Vec<f64>>], p: &[f64]) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (f, v) in values.iter().enumerate() {
            if v.is_none() {
                continue;
            }
            let d: f64 = self.point(f).iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, f));
            }
        }
        best.map(|(_, f)| f)
    }
}

/// Result of solving one node.
pub(crate) struct NodeSolution {
    pub value: Vec<f64>,
    pub residual: f64,
    /// Extra per-node data carried for later warm starts.
    pub aux: Vec<f64>,
}

pub(crate) struct SweepNode {
    pub value: Option<Vec<f64>>,
    pub residual: f64,
    pub aux: Option<Vec<f64>>,
}

/// Solves every node shell by shell. `solve(point, warm_value, warm_aux)`
/// returns the node solution or the best residual reached.
pub(crate) fn sweep<S>(grid: &Grid, origin: NodeSolution, mut solve: S) -> Vec<SweepNode>
where
    S: FnMut(&[f64], &[f64], &[f64]) -> Result<NodeSolution, f64>,
{
    let mut nodes: Vec<SweepNode> = (0..grid.len())
        .map(|_| SweepNode {
            value: None,
            residual: f64::INFINITY,
            aux: None,
        })
        .collect();
    let mut solved = vec![false; grid.len()];
    let o = grid.origin();
    nodes[o] = SweepNode {
        value: Some(origin.value),
        residual: origin.residual,
        aux: Some(origin.aux),
    };
    solved[o] = true;
    for f in grid.shell_order() {
        if f == o {
            continue;
        }
        let from = grid.nearest_solved(f, &solved).unwrap_or(o);
        let warm = nodes[from].value.clone().expect("solved");
        let warm_aux = nodes[from].aux.clone().unwrap_or_default();
        let p = grid.point(f);
        match solve(&p, &warm, &warm_aux) {
            Ok(sol) => {
                nodes[f] = SweepNode {
                    value: Some(sol.value),
                    residual: sol.residual,
                    aux: Some(sol.aux),
                };
                solved[f] = true;
            }
            Err(residual) => nodes[f].residual = residual,
        }
    }
    nodes
}

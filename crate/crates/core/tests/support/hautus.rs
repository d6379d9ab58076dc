//! Stabilizing-gain oracle for the Hautus test: a gain `K` is built on
//! the controllable subspace (Bass's method) or searched for at random, and
//! `A + BK` is certified Hurwitz by the Routh–Hurwitz conditions on its
//! characteristic polynomial.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stability margin required of the closed loop.
const MARGIN: f64 = 1e-7;

pub fn routh_hurwitz(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let s = m + DMatrix::identity(n, n) * MARGIN;
    match n {
        1 => s[(0, 0)] < 0.0,
        2 => {
            let tr = s[(0, 0)] + s[(1, 1)];
            let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
            tr < 0.0 && det > 0.0
        }
        3 => {
            let tr = s[(0, 0)] + s[(1, 1)] + s[(2, 2)];
            let minor = |i: usize, j: usize| s[(i, i)] * s[(j, j)] - s[(i, j)] * s[(j, i)];
            let c1 = minor(0, 1) + minor(0, 2) + minor(1, 2);
            let det = s[(0, 0)] * minor(1, 2) - s[(0, 1)] * (s[(1, 0)] * s[(2, 2)] - s[(1, 2)] * s[(2, 0)])
                + s[(0, 2)] * (s[(1, 0)] * s[(2, 1)] - s[(1, 1)] * s[(2, 0)]);
            let (c2, c0) = (-tr, -det);
            c2 > 0.0 && c1 > 0.0 && c0 > 0.0 && c2 * c1 > c0
        }
        _ => unreachable!(),
    }
}

/// Appends the parts of `candidates` orthogonal to `basis` (Gram–Schmidt).
fn extend_basis(basis: &mut Vec<Vec<f64>>, candidates: impl IntoIterator<Item = Vec<f64>>) {
    for mut v in candidates {
        for _ in 0..2 {
            for b in basis.iter() {
                let d: f64 = v.iter().zip(b).map(|(p, q)| p * q).sum();
                v.iter_mut().zip(b).for_each(|(p, q)| *p -= d * q);
            }
        }
        let norm = v.iter().map(|p| p * p).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|p| p / norm).collect());
        }
    }
}

/// Bass's construction on the controllable part, zero gain elsewhere.
pub fn bass_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut krylov = Vec::new();
    let mut block = b.clone();
    for _ in 0..n {
        krylov.extend(block.column_iter().map(|c| c.iter().copied().collect::<Vec<f64>>()));
        block = a * &block;
    }
    let mut basis = Vec::new();
    extend_basis(&mut basis, krylov);
    let r = basis.len();
    if r == 0 {
        return DMatrix::zeros(m, n);
    }
    extend_basis(
        &mut basis,
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()),
    );
    let t = DMatrix::from_fn(n, n, |i, j| basis[j][i]);
    let at = t.transpose() * a * &t;
    let bt = t.transpose() * b;
    let ac = at.view((0, 0), (r, r)).into_owned();
    let bc = bt.view((0, 0), (r, m)).into_owned();
    // (Ac + beta I) P + P (Ac + beta I)^T = Bc Bc^T with Ac + beta I anti-stable
    let beta = 1.0 + ac.norm();
    let x = &ac + DMatrix::identity(r, r) * beta;
    let id = DMatrix::<f64>::identity(r, r);
    let lyap = id.kronecker(&x) + x.kronecker(&id);
    let q = &bc * bc.transpose();
    let vec_q = DMatrix::from_column_slice(r * r, 1, q.as_slice());
    let vec_p = lyap.lu().solve(&vec_q).expect("Lyapunov operator is invertible");
    let p = DMatrix::from_column_slice(r, r, vec_p.as_slice());
    let kc = -(bc.transpose() * p.try_inverse().expect("controllable part gives invertible P"));
    let mut k = DMatrix::zeros(m, n);
    k.view_mut((0, 0), (m, r)).copy_from(&kc);
    k * t.transpose()
}

/// `Some(K)` with `A + BK` certified Hurwitz, if one is found.
pub fn oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Option<DMatrix<f64>> {
    let (n, m) = (a.nrows(), b.ncols());
    let k = bass_gain(a, b);
    if routh_hurwitz(&(a + b * &k)) {
        return Some(k);
    }
    if m == 0 {
        return None;
    }
    for _ in 0..20_000 {
        let scale = [1.0, 5.0, 25.0][rng.random_range(0..3)];
        let k = DMatrix::from_fn(m, n, |_, _| rng.random_range(-scale..scale));
        if routh_hurwitz(&(a + b * &k)) {
            return Some(k);
        }
    }
    None
}

pub fn random_pair(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(0..=2);
    let density = rng.random_range(0.3..1.0);
    let entry = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(density) {
            rng.random_range(-2i32..=2) as f64
        } else {
            0.0
        }
    };
    let a = DMatrix::from_fn(n, n, |_, _| entry(rng));
    let b = DMatrix::from_fn(n, m, |_, _| entry(rng));
    (a, b)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Agreement {
    pub stabilizable: usize,
    pub not_stabilizable: usize,
    /// Hautus says stabilizable, no certified gain exists.
    pub false_positives: usize,
    /// Hautus says not stabilizable, a certified gain was found.
    pub false_negatives: usize,
}

/// Runs the Hautus test and the oracle on `count` seeded random pairs.
pub fn compare(count: usize, seed: u64) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Agreement::default();
    for _ in 0..count {
        let (a, b) = random_pair(&mut rng);
        let verdict = nlstab_core::lintest::hautus_test(&a, &b).unwrap();
        let found = oracle(&a, &b, &mut oracle_rng).is_some();
        match (verdict.stabilizable, found) {
            (true, true) => out.stabilizable += 1,
            (false, false) => out.not_stabilizable += 1,
            (true, false) => out.false_positives += 1,
            (false, true) => out.false_negatives += 1,
        }
    }
    out
}

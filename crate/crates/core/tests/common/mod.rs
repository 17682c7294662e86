//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use basisfit::{BasisStack, DepthActivation, Grid, MultiScaleBases, ScaleWeights, SparseDepthSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p != 0.0, "singular matrix in oracle");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != col {
                let f = row[col];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Inverse-sigmoid logit with the clamp, written out directly.
pub fn logit_oracle(s: f64, a: f64, eps: f64) -> f64 {
    let sc = s.max(a * (1.0 + eps));
    -((sc - a) / a).ln()
}

/// Ridge weights `(λI + BᵀB)⁻¹ Bᵀ t` through the Gauss-Jordan inverse.
pub fn ridge_oracle(rows: &[Vec<f64>], t: &[f64], lambda: f64) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (row, ti) in rows.iter().zip(t) {
        for j in 0..p {
            rhs[j] += row[j] * ti;
            for k in 0..p {
                a[j][k] += row[j] * row[k];
            }
        }
    }
    for (j, r) in a.iter_mut().enumerate() {
        r[j] += lambda;
    }
    let inv = gauss_jordan_inverse(&a);
    inv.iter().map(|r| r.iter().zip(&rhs).map(|(x, y)| x * y).sum()).collect()
}

/// `‖a - b‖∞ / ‖b‖∞`.
pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Random rows (bias first, channels in [-1, 1)) and depths in [2, 50).
pub fn random_instance(n: usize, m: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let mut r = vec![1.0];
            r.extend((0..m).map(|_| rng.random_range(-1.0..1.0)));
            r
        })
        .collect();
    let depths = (0..n).map(|_| rng.random_range(2.0..50.0)).collect();
    (rows, depths)
}

pub fn to_problem(rows: &[Vec<f64>], depths: &[f64], sigma: f64) -> (BasisStack, SparseDepthSet) {
    let b = BasisStack::from_row_vecs(rows).unwrap();
    let s = SparseDepthSet::with_uniform_sigma((0..depths.len()).collect(), depths.to_vec(), sigma).unwrap();
    (b, s)
}

pub fn default_act() -> DepthActivation {
    DepthActivation::default()
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Random pyramid of 1..=4 levels with 1..=5 channels each, and matching weights.
pub fn random_pyramid(seed: u64) -> (MultiScaleBases, ScaleWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels_n = rng.random_range(1..=4usize);
    let base = rng.random_range(1..=3usize);
    let (h, w) = (base << (levels_n - 1), (base + 1) << (levels_n - 1));
    let mut levels = Vec::new();
    let mut plan = Vec::new();
    for k in 0..levels_n {
        let f = 1 << (levels_n - 1 - k);
        let c = rng.random_range(1..=5usize);
        let data = (0..(h / f) * (w / f) * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        levels.push(Grid::new(h / f, w / f, c, data).unwrap());
        plan.push(c);
    }
    let ms = MultiScaleBases::new(h, w, levels).unwrap();
    let flat: Vec<f64> = (0..ms.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
    (ms, ScaleWeights::from_flat(&flat, &plan).unwrap())
}

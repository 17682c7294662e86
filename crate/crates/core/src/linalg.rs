//! Dense symmetric positive-definite linear algebra.
//!
//! Systems solved here are small (total basis channels + 1) and symmetric
//! positive definite by construction (`λ > 0` on the diagonal), so a plain
//! unpivoted Cholesky factorization is used throughout. All arithmetic is
//! `f64` regardless of how grids are stored on disk: forming normal
//! equations squares the condition number.
//!
//! [`solve_spd_backward`] propagates a gradient through `x = A⁻¹ b`:
//!
//! ```text
//! grad_b = A⁻¹ grad_x
//! grad_A = -½ (grad_b xᵀ + x grad_bᵀ)
//! ```
//!
//! The symmetrization reflects that `A` is constrained to be symmetric.

use crate::error::{check_len, Error, Result};

/// Pivots at or below this value abort the factorization. This is an
/// underflow guard, not a conditioning test.
pub const PIVOT_FLOOR: f64 = 1e-300;

/// Square symmetric matrix stored densely in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from row-major entries; symmetry is checked exactly.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                what: "matrix dimension",
                expected: 1,
                found: 0,
            });
        }
        check_len("matrix entries", dim * dim, data.len())?;
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Fills the upper triangle from `f(i, j)` (i ≤ j) and mirrors it.
    pub(crate) fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Builds from an upper triangle accumulated in a row-major buffer.
    pub(crate) fn mirror_upper(dim: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim);
        for i in 0..dim {
            for j in (i + 1)..dim {
                data[j * dim + i] = data[i * dim + j];
            }
        }
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += value;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("vector length", self.dim, x.len())?;
        Ok(self
            .data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Lower-triangular `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholeskyFactor {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry `(i, j)` of `L`; zero above the diagonal.
    #[inline]
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_upper(n, |i, j| {
            (0..=i).map(|k| self.lower(i, k) * self.lower(j, k)).sum()
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        solve_spd(self, rhs)
    }
}

/// Cholesky–Banachiewicz factorization, row by row.
pub fn cholesky(a: &SymMatrix) -> Result<CholeskyFactor> {
    let n = a.dim;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            for (x, y) in ri.iter().zip(rj) {
                sum -= x * y;
            }
            if i == j {
                // negated test so that NaN pivots fail as well
                if !(sum > PIVOT_FLOOR) {
                    return Err(Error::NotPositiveDefinite {
                        pivot_index: i,
                        pivot: sum,
                    });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(CholeskyFactor { dim: n, lower: l })
}

/// Solves `L Lᵀ x = rhs` by forward then back substitution.
pub fn solve_spd(factor: &CholeskyFactor, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = factor.dim;
    check_len("right-hand side", n, rhs.len())?;
    let l = &factor.lower;
    let mut y = rhs.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    Ok(y)
}

/// Gradients of a scalar loss with respect to the inputs of `x = A⁻¹ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveGradients {
    pub grad_a: SymMatrix,
    pub grad_rhs: Vec<f64>,
}

/// Backward pass of [`solve_spd`] for a matrix that has not been factored yet.
pub fn solve_spd_backward(a: &SymMatrix, x: &[f64], grad_x: &[f64]) -> Result<SolveGradients> {
    let factor = cholesky(a)?;
    solve_spd_backward_factored(&factor, x, grad_x)
}

/// Backward pass of [`solve_spd`] reusing the forward factorization.
pub fn solve_spd_backward_factored(
    factor: &CholeskyFactor,
    x: &[f64],
    grad_x: &[f64],
) -> Result<SolveGradients> {
    let n = factor.dim;
    check_len("solution", n, x.len())?;
    check_len("solution gradient", n, grad_x.len())?;
    let grad_rhs = solve_spd(factor, grad_x)?;
    let grad_a = SymMatrix::from_upper(n, |i, j| -0.5 * (grad_rhs[i] * x[j] + grad_rhs[j] * x[i]));
    Ok(SolveGradients { grad_a, grad_rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = SymMatrix::from_upper(dim, |i, j| {
            (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum()
        });
        a.add_diagonal(1.0);
        a
    }

    fn rel_frob(a: &SymMatrix, b: &SymMatrix) -> f64 {
        let diff: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        diff / b.frobenius_norm()
    }

    #[test]
    fn identity_factors_to_identity() {
        let f = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(f.reconstruct(), SymMatrix::identity(3));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(f.lower(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn two_by_two_by_hand() {
        let a = SymMatrix::from_row_major(2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let f = cholesky(&a).unwrap();
        assert_eq!(f.lower(0, 0), 2.0);
        assert_eq!(f.lower(1, 0), 1.0);
        assert_eq!(f.lower(0, 1), 0.0);
        assert!((f.lower(1, 1) - 2f64.sqrt()).abs() < 1e-15);

        let x = solve_spd(&f, &[8.0, 7.0]).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-14 && (x[1] - 1.5).abs() < 1e-14);
        // direct multiplication check
        let back = a.mul_vec(&x).unwrap();
        assert!((back[0] - 8.0).abs() < 1e-13 && (back[1] - 7.0).abs() < 1e-13);
    }

    #[test]
    fn seeded_8x8_reconstructs() {
        let a = random_spd(8, 7);
        let f = cholesky(&a).unwrap();
        assert!(rel_frob(&f.reconstruct(), &a) <= 1e-12);
        for i in 0..8 {
            assert!(f.lower(i, i) > 0.0);
        }
    }

    #[test]
    fn identity_solve() {
        let f = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(solve_spd(&f, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn seeded_16x16_residual() {
        let a = random_spd(16, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = solve_spd(&cholesky(&a).unwrap(), &b).unwrap();
        let r = a.mul_vec(&x).unwrap();
        let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = r.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err <= 1e-10 * bmax, "residual {err}");
    }

    #[test]
    fn rhs_length_is_checked() {
        let f = cholesky(&SymMatrix::identity(3)).unwrap();
        assert!(matches!(
            solve_spd(&f, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn indefinite_and_singular_are_rejected() {
        let a = SymMatrix::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { pivot_index: 1, .. })
        ));
        let z = SymMatrix::from_row_major(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            cholesky(&z),
            Err(Error::NotPositiveDefinite { pivot_index: 1, .. })
        ));
        let nan = SymMatrix::from_row_major(1, vec![f64::NAN]).unwrap();
        assert!(cholesky(&nan).is_err());
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        assert!(matches!(
            SymMatrix::from_row_major(2, vec![1.0, 0.5, 0.4, 1.0]),
            Err(Error::NotSymmetric { row: 0, col: 1 })
        ));
    }

    #[test]
    fn backward_identity_case() {
        let g = solve_spd_backward(&SymMatrix::identity(2), &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(g.grad_rhs, vec![1.0, 0.0]);
        // -½(e0 e0ᵀ + e0 e0ᵀ)
        assert_eq!(g.grad_a.as_slice(), &[-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_zero_gradient() {
        let a = random_spd(4, 3);
        let x = solve_spd(&cholesky(&a).unwrap(), &[1.0, -2.0, 0.5, 3.0]).unwrap();
        let g = solve_spd_backward(&a, &x, &[0.0; 4]).unwrap();
        assert!(g.grad_rhs.iter().all(|v| *v == 0.0));
        assert!(g.grad_a.as_slice().iter().all(|v| *v == 0.0));
    }

    /// Central differences of loss(x) = cᵀx, with x = A⁻¹ b, perturbing the
    /// symmetric pair (i, j)/(j, i) of A together.
    #[test]
    fn backward_matches_finite_differences() {
        let n = 6;
        let a = random_spd(n, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |a: &SymMatrix, b: &[f64]| -> f64 {
            let x = solve_spd(&cholesky(a).unwrap(), b).unwrap();
            x.iter().zip(&c).map(|(p, q)| p * q).sum()
        };
        let x = solve_spd(&cholesky(&a).unwrap(), &b).unwrap();
        let g = solve_spd_backward(&a, &x, &c).unwrap();
        let h = 1e-6;

        let mut worst = 0.0f64;
        let scale = g.grad_a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in i..n {
                let bump = |d: f64| {
                    let mut data = a.as_slice().to_vec();
                    data[i * n + j] += d;
                    if i != j {
                        data[j * n + i] += d;
                    }
                    SymMatrix::from_row_major(n, data).unwrap()
                };
                let fd = (loss(&bump(h), &b) - loss(&bump(-h), &b)) / (2.0 * h);
                // a symmetric perturbation touches both entries
                let analytic = if i == j {
                    g.grad_a.get(i, i)
                } else {
                    g.grad_a.get(i, j) + g.grad_a.get(j, i)
                };
                worst = worst.max((fd - analytic).abs() / scale);
            }
        }
        assert!(worst <= 1e-5, "grad_a rel err {worst}");

        let scale = g.grad_rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            let fd = (loss(&a, &bp) - loss(&a, &bm)) / (2.0 * h);
            assert!((fd - g.grad_rhs[i]).abs() / scale <= 1e-5);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn factor_round_trip(dim in 1usize..=128, seed in any::<u64>()) {
                let a = random_spd(dim, seed);
                let f = cholesky(&a).unwrap();
                prop_assert!(rel_frob(&f.reconstruct(), &a) <= 1e-10);
            }

            #[test]
            fn solve_residual_bounded(dim in 1usize..=48, seed in any::<u64>(), log_cond in 0.0f64..8.0) {
                // A = Q diag(s) Qᵀ with a prescribed spread of eigenvalues
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let q = random_orthogonal(dim, &mut rng);
                let eig: Vec<f64> = (0..dim)
                    .map(|k| 10f64.powf(-log_cond * k as f64 / (dim.max(2) - 1) as f64))
                    .collect();
                let a = SymMatrix::from_upper(dim, |i, j| {
                    (0..dim).map(|k| q[i * dim + k] * eig[k] * q[j * dim + k]).sum()
                });
                let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
                let x = solve_spd(&cholesky(&a).unwrap(), &b).unwrap();
                let r = a.mul_vec(&x).unwrap();
                // backward stability: |Ax - b| <~ n ε (|A| |x| + |b|)
                let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let a_norm = (0..dim)
                    .map(|i| (0..dim).map(|j| a.get(i, j).abs()).sum::<f64>())
                    .fold(0.0f64, f64::max);
                let bound = 10.0 * dim as f64 * f64::EPSILON * (a_norm * inf(&x) + inf(&b));
                let err = r.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
                prop_assert!(err <= bound, "err {} bound {}", err, bound);
            }
        }

        fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
            // modified Gram-Schmidt on a random matrix, columns stored row-major
            let mut m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for c in 0..n {
                for p in 0..c {
                    let d: f64 = (0..n).map(|r| m[r * n + c] * m[r * n + p]).sum();
                    for r in 0..n {
                        m[r * n + c] -= d * m[r * n + p];
                    }
                }
                let norm: f64 = (0..n).map(|r| m[r * n + c].powi(2)).sum::<f64>().sqrt();
                for r in 0..n {
                    m[r * n + c] /= norm;
                }
            }
            m
        }
    }
}

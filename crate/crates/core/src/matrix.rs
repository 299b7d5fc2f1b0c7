//! Dense row-major matrices with cached row norms, plus the spectral
//! primitives the certificates are built from: a deterministic power
//! iteration for the largest singular value and the combinatorial
//! smallest singular value over column submatrices.

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Column-subset enumeration is exponential in the column count; above
/// this cap the constant must be supplied by the caller.
pub const DEFAULT_SUBSET_CAP: usize = 16;

/// Dense matrix, row-major storage. Row Euclidean norms and the Frobenius
/// norm are cached at construction and the matrix is immutable afterwards;
/// solver kernels never renormalize rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    row_norms: Vec<f64>,
    frob_sq: f64,
}

impl DenseMatrix {
    /// Build from row-major entries. All entries must be finite.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix entry count",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        let mut row_norms = Vec::with_capacity(rows);
        let mut frob_sq = 0.0;
        for r in 0..rows {
            let sq: f64 = data[r * cols..(r + 1) * cols].iter().map(|v| v * v).sum();
            frob_sq += sq;
            row_norms.push(sq.sqrt());
        }
        Ok(DenseMatrix {
            rows,
            cols,
            data,
            row_norms,
            frob_sq,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_rows(rows, cols, data)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 }).expect("identity is finite")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row_norms[i]
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.row_norms[i] * self.row_norms[i]
    }

    pub fn row_norms(&self) -> &[f64] {
        &self.row_norms
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_sq.sqrt()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.frob_sq
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matvec input",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `A^T y`.
    pub fn matvec_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "transpose matvec input",
                expected: self.rows,
                got: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &aij) in out.iter_mut().zip(self.row(i)) {
                *o += yi * aij;
            }
        }
        Ok(out)
    }

    /// `A A^T`, an m-by-m symmetric matrix.
    pub fn gram_aat(&self) -> DenseMatrix {
        let m = self.rows;
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = dot(self.row(i), self.row(j));
                data[i * m + j] = v;
                data[j * m + i] = v;
            }
        }
        DenseMatrix::from_rows(m, m, data).expect("gram of finite matrix is finite")
    }

    pub fn zero_row(&self) -> Option<usize> {
        self.row_norms.iter().position(|&n| n == 0.0)
    }

    pub fn require_nonzero_rows(&self) -> Result<()> {
        match self.zero_row() {
            Some(i) => Err(Error::ZeroRow(i)),
            None => Ok(()),
        }
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm2_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Singular values of `a` in decreasing order, via dense SVD.
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = a.to_nalgebra().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).expect("singular values are finite"));
    sv
}

/// Largest singular value of `a` by power iteration on the smaller Gram
/// operator (A^T A or A A^T). Starts from the deterministic vector
/// (1,...,1)/sqrt(d) so certificates are reproducible; restarts once from
/// a seeded random vector if the Rayleigh quotient stagnates. Converges
/// when the Rayleigh residual ||Bv - rho v|| falls below `tol * rho`.
pub fn spectral_norm(a: &DenseMatrix, tol: f64, max_power_iters: usize) -> Result<f64> {
    if tol <= 0.0 {
        return Err(Error::OutOfRange {
            quantity: "tol",
            value: tol,
            constraint: "tol > 0",
        });
    }
    if a.frob_norm_sq() == 0.0 {
        return Ok(0.0);
    }
    let use_cols = a.cols <= a.rows;
    let dim = if use_cols { a.cols } else { a.rows };

    // B v with B = A^T A (or A A^T), never forming B.
    let apply = |v: &[f64]| -> Vec<f64> {
        if use_cols {
            let u = a.matvec(v).expect("dims fixed");
            a.matvec_transpose(&u).expect("dims fixed")
        } else {
            let u = a.matvec_transpose(v).expect("dims fixed");
            a.matvec(&u).expect("dims fixed")
        }
    };

    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut rho_prev = f64::NAN;
    let mut stagnant = 0usize;
    let mut restarted = false;
    let mut last_residual = f64::INFINITY;

    for _ in 0..max_power_iters {
        let w = apply(&v);
        let rho = dot(&v, &w);
        let residual_sq: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| {
                let r = wi - rho * vi;
                r * r
            })
            .sum();
        let residual = residual_sq.sqrt();
        last_residual = residual;
        if residual <= tol * rho && rho > 0.0 {
            return Ok(rho.sqrt());
        }
        let nw = norm2(&w);
        if nw == 0.0 || (rho - rho_prev).abs() <= f64::EPSILON * rho.abs() {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        if (nw == 0.0 || stagnant > 20) && !restarted {
            // start vector was (numerically) orthogonal to the top
            // eigenvector; retry from a seeded random direction
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
            v = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nv = norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            restarted = true;
            rho_prev = f64::NAN;
            stagnant = 0;
            continue;
        }
        if nw == 0.0 {
            return Ok(0.0);
        }
        v = w;
        v.iter_mut().for_each(|x| *x /= nw);
        rho_prev = rho;
    }
    Err(Error::NoConvergence {
        max_iters: max_power_iters,
        residual: last_residual,
    })
}

/// min { sigma_min(A_J) : J nonempty column subset, A_J != 0 }, by
/// enumeration of all 2^n - 1 subsets with a small SVD each. A submatrix
/// with more columns than rows has a nontrivial null space, hence
/// smallest singular value zero.
pub fn min_singular_over_column_subsets(a: &DenseMatrix, max_cols: usize) -> Result<f64> {
    let n = a.cols;
    if n > max_cols {
        return Err(Error::TooLarge {
            cols: n,
            max_cols,
        });
    }
    if a.frob_norm_sq() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let m = a.rows;
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let mut sub = nalgebra::DMatrix::zeros(m, cols.len());
        let mut nonzero = false;
        for (cj, &j) in cols.iter().enumerate() {
            for i in 0..m {
                let v = a.get(i, j);
                sub[(i, cj)] = v;
                nonzero |= v != 0.0;
            }
        }
        if !nonzero {
            continue;
        }
        let smin = if cols.len() > m {
            0.0
        } else {
            sub.singular_values()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        };
        best = best.min(smin);
        if best == 0.0 {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian_matrix;

    #[test]
    fn cached_row_norms_match_recomputation() {
        let a = gaussian_matrix(7, 4, 11);
        let mut frob_sq = 0.0;
        for i in 0..7 {
            let norm = norm2(a.row(i));
            assert!((a.row_norm(i) - norm).abs() <= 1e-12 * norm.max(1.0));
            frob_sq += norm * norm;
        }
        assert!((a.frob_norm_sq() - frob_sq).abs() <= 1e-12 * frob_sq);
    }

    #[test]
    fn spectral_norm_identity_is_one() {
        let id = DenseMatrix::identity(3);
        assert_eq!(spectral_norm(&id, 1e-12, 100).unwrap(), 1.0);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let a = DenseMatrix::from_rows(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let s = spectral_norm(&a, 1e-12, 10_000).unwrap();
        assert!((s - 3.0).abs() < 1e-10, "s = {s}");
    }

    #[test]
    fn spectral_norm_matches_svd_oracle() {
        let a = gaussian_matrix(20, 10, 42);
        let s = spectral_norm(&a, 1e-13, 50_000).unwrap();
        let oracle = singular_values(&a)[0];
        assert!((s - oracle).abs() <= 1e-8 * oracle, "{s} vs {oracle}");
    }

    #[test]
    fn spectral_norm_dominates_rayleigh_quotients() {
        use rand::Rng;
        let a = gaussian_matrix(12, 9, 7);
        let s = spectral_norm(&a, 1e-13, 50_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let ax = a.matvec(&x).unwrap();
            assert!(s + 1e-9 >= norm2(&ax) / norm2(&x));
        }
    }

    #[test]
    fn spectral_norm_zero_matrix_is_zero() {
        let a = DenseMatrix::from_rows(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(spectral_norm(&a, 1e-12, 10).unwrap(), 0.0);
    }

    #[test]
    fn subset_min_singular_identity() {
        let id = DenseMatrix::identity(4);
        let s = min_singular_over_column_subsets(&id, DEFAULT_SUBSET_CAP).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subset_min_singular_diag() {
        let a = DenseMatrix::from_rows(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let s = min_singular_over_column_subsets(&a, DEFAULT_SUBSET_CAP).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subset_min_singular_matches_independent_enumeration() {
        let a = gaussian_matrix(8, 5, 99);
        let got = min_singular_over_column_subsets(&a, DEFAULT_SUBSET_CAP).unwrap();

        // independent route: recursive subset walk, smallest eigenvalue of
        // the Gram matrix A_J^T A_J
        fn walk(a: &DenseMatrix, j: usize, picked: &mut Vec<usize>, best: &mut f64) {
            if j == a.cols() {
                if picked.is_empty() {
                    return;
                }
                let k = picked.len();
                let mut gram = nalgebra::DMatrix::zeros(k, k);
                for (r, &cr) in picked.iter().enumerate() {
                    for (c, &cc) in picked.iter().enumerate() {
                        let mut v = 0.0;
                        for i in 0..a.rows() {
                            v += a.get(i, cr) * a.get(i, cc);
                        }
                        gram[(r, c)] = v;
                    }
                }
                if gram.iter().all(|&v| v == 0.0) {
                    return;
                }
                let eigmin = gram
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0);
                *best = best.min(eigmin.sqrt());
                return;
            }
            walk(a, j + 1, picked, best);
            picked.push(j);
            walk(a, j + 1, picked, best);
            picked.pop();
        }
        let mut oracle = f64::INFINITY;
        walk(&a, 0, &mut Vec::new(), &mut oracle);
        assert!((got - oracle).abs() <= 1e-8 * oracle.max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn subset_min_singular_below_any_explicit_subset() {
        let a = gaussian_matrix(6, 4, 5);
        let s = min_singular_over_column_subsets(&a, DEFAULT_SUBSET_CAP).unwrap();
        for cols in [vec![0], vec![1, 3], vec![0, 1, 2, 3]] {
            let sub = DenseMatrix::from_fn(6, cols.len(), |i, j| a.get(i, cols[j])).unwrap();
            let smin = *singular_values(&sub).last().unwrap();
            assert!(s <= smin + 1e-12);
        }
    }

    #[test]
    fn subset_min_singular_rejects_wide_enumeration() {
        let a = gaussian_matrix(3, 18, 1);
        match min_singular_over_column_subsets(&a, DEFAULT_SUBSET_CAP) {
            Err(Error::TooLarge { cols: 18, .. }) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
    }

    #[test]
    fn nonfinite_entries_rejected() {
        assert!(matches!(
            DenseMatrix::from_rows(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }
}

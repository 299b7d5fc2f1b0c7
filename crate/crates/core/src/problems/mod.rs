//! Synthetic problem generation and noise injection.
//!
//! A problem holds a Gaussian matrix A, a ground truth xhat with exactly
//! `s` nonzero entries, the consistent right-hand side b = A xhat, and
//! optionally a noisy right-hand side at a prescribed distance. `s`
//! counts NONZEROS of xhat, following the figure captions and the usual
//! sparse-recovery convention.

mod io;

pub use io::{load_problem, save_problem, MatrixFormat};
pub use io::{read_matrix_market, write_matrix_market};

use crate::error::{Error, Result};
use crate::matrix::{all_finite, norm2, DenseMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub b_noisy: Option<Vec<f64>>,
    pub xhat: Option<Vec<f64>>,
    pub noise_level: Option<f64>,
    pub sparsity: usize,
    pub seed: u64,
}

impl Problem {
    /// Right-hand side the solver sees: the noisy one when present.
    pub fn rhs(&self) -> &[f64] {
        self.b_noisy.as_deref().unwrap_or(&self.b)
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    /// Consistency and noise-radius invariants; called after load.
    pub fn validate(&self) -> Result<()> {
        if self.b.len() != self.a.rows() {
            return Err(Error::DimensionMismatch {
                context: "problem rhs",
                expected: self.a.rows(),
                got: self.b.len(),
            });
        }
        if !all_finite(&self.b) {
            return Err(Error::NonFinite("problem rhs"));
        }
        if let Some(xhat) = &self.xhat {
            if xhat.len() != self.a.cols() {
                return Err(Error::DimensionMismatch {
                    context: "problem xhat",
                    expected: self.a.cols(),
                    got: xhat.len(),
                });
            }
            let ax = self.a.matvec(xhat)?;
            let dev = ax
                .iter()
                .zip(&self.b)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            let scale = norm2(&self.b).max(1.0);
            if dev > 1e-10 * scale {
                return Err(Error::format(
                    0,
                    0,
                    format!("b is not A*xhat: ||A xhat - b|| = {dev:e}"),
                ));
            }
            let nonzeros = xhat.iter().filter(|v| **v != 0.0).count();
            if nonzeros != self.sparsity {
                return Err(Error::format(
                    0,
                    0,
                    format!(
                        "xhat has {nonzeros} nonzeros but declared sparsity is {}",
                        self.sparsity
                    ),
                ));
            }
        }
        if let (Some(bn), Some(ell)) = (&self.b_noisy, self.noise_level) {
            let dist = bn
                .iter()
                .zip(&self.b)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            if dist > ell * (1.0 + 1e-12) {
                return Err(Error::format(
                    0,
                    0,
                    format!("||b - b_noisy|| = {dist:e} exceeds noise level {ell:e}"),
                ));
            }
        }
        Ok(())
    }
}

/// A ~ N(0,1) entries drawn row-major, xhat with exactly `s` standard
/// normal entries at uniformly chosen positions, b = A xhat. Deterministic
/// in the seed.
pub fn generate_gaussian(m: usize, n: usize, s: usize, seed: u64) -> Result<Problem> {
    if s == 0 || s > n {
        return Err(Error::InvalidSparsity { s, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let a = DenseMatrix::from_rows(m, n, data)?;
    a.require_nonzero_rows()?;

    let support = rand::seq::index::sample(&mut rng, n, s);
    let mut xhat = vec![0.0; n];
    for j in support {
        // a standard normal is zero with probability zero, but the declared
        // nonzero count is an invariant, so redraw on exact zero
        let mut v: f64 = StandardNormal.sample(&mut rng);
        while v == 0.0 {
            v = StandardNormal.sample(&mut rng);
        }
        xhat[j] = v;
    }
    let b = a.matvec(&xhat)?;
    Ok(Problem {
        a,
        b,
        b_noisy: None,
        xhat: Some(xhat),
        noise_level: None,
        sparsity: s,
        seed,
    })
}

/// Add noise drawn uniformly from the sphere of radius `ell`: a Gaussian
/// direction normalized and scaled, so ||b - b_noisy|| = ell exactly up
/// to rounding.
pub fn add_sphere_noise(problem: &Problem, ell: f64, seed: u64) -> Result<Problem> {
    if ell < 0.0 {
        return Err(Error::OutOfRange {
            quantity: "ell",
            value: ell,
            constraint: "ell >= 0",
        });
    }
    let m = problem.m();
    let mut out = problem.clone();
    if ell == 0.0 {
        out.b_noisy = Some(problem.b.clone());
        out.noise_level = Some(0.0);
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64>;
    loop {
        dir = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nrm = norm2(&dir);
        if nrm > 0.0 {
            dir.iter_mut().for_each(|v| *v *= ell / nrm);
            break;
        }
    }
    out.b_noisy = Some(problem.b.iter().zip(&dir).map(|(b, e)| b + e).collect());
    out.noise_level = Some(ell);
    Ok(out)
}

/// eta = 1 + floor(min(m, n)/10), the default batch size.
pub fn default_eta(m: usize, n: usize) -> usize {
    1 + m.min(n) / 10
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_respects_sparsity_and_consistency() {
        let p = generate_gaussian(100, 20, 10, 7).unwrap();
        let xhat = p.xhat.as_ref().unwrap();
        assert_eq!(xhat.iter().filter(|v| **v != 0.0).count(), 10);
        p.validate().unwrap();
    }

    #[test]
    fn dense_xhat_when_s_equals_n() {
        let p = generate_gaussian(6, 4, 4, 8).unwrap();
        assert!(p.xhat.unwrap().iter().all(|v| *v != 0.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let p1 = generate_gaussian(12, 9, 3, 55).unwrap();
        let p2 = generate_gaussian(12, 9, 3, 55).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn invalid_sparsity_rejected() {
        assert!(matches!(
            generate_gaussian(5, 4, 0, 0),
            Err(Error::InvalidSparsity { .. })
        ));
        assert!(matches!(
            generate_gaussian(5, 4, 5, 0),
            Err(Error::InvalidSparsity { .. })
        ));
    }

    #[test]
    fn sphere_noise_radius_is_exact() {
        let p = generate_gaussian(30, 10, 5, 1).unwrap();
        for ell in [0.5, 2.0, 1e-3] {
            let noisy = add_sphere_noise(&p, ell, 2).unwrap();
            let d = noisy
                .b_noisy
                .as_ref()
                .unwrap()
                .iter()
                .zip(&p.b)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            assert!((d - ell).abs() <= 1e-12 * ell, "radius {d} vs {ell}");
            noisy.validate().unwrap();
        }
    }

    #[test]
    fn zero_noise_copies_rhs() {
        let p = generate_gaussian(5, 3, 2, 3).unwrap();
        let noisy = add_sphere_noise(&p, 0.0, 9).unwrap();
        assert_eq!(noisy.b_noisy.as_ref().unwrap(), &p.b);
    }

    #[test]
    fn sphere_noise_mean_shrinks_statistically() {
        // mean of N draws from the sphere has norm O(ell/sqrt(N))
        let p = generate_gaussian(8, 3, 2, 4).unwrap();
        let ell = 1.0;
        let n_draws = 10_000usize;
        let mut mean = vec![0.0; 8];
        for t in 0..n_draws {
            let noisy = add_sphere_noise(&p, ell, 1000 + t as u64).unwrap();
            for (mu, (bn, b)) in mean
                .iter_mut()
                .zip(noisy.b_noisy.as_ref().unwrap().iter().zip(&p.b))
            {
                *mu += (bn - b) / n_draws as f64;
            }
        }
        assert!(norm2(&mean) <= 4.0 * ell / (n_draws as f64).sqrt());
    }

    #[test]
    fn default_eta_rule() {
        assert_eq!(default_eta(100, 20), 3);
        assert_eq!(default_eta(200, 600), 21);
        assert_eq!(default_eta(5, 9), 1);
    }
}

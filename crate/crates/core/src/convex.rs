//! Convex-analysis kernel for the regularized basis pursuit objective
//! f(x) = lambda*||x||_1 + 1/2*||x||_2^2: soft shrinkage, the conjugate
//! f*, and the Bregman distance that drives the convergence analysis.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, norm2_sq, DenseMatrix};

/// Tolerance for the subgradient membership check x* in df(x),
/// verified as ||S_lambda(x*) - x||_inf <= SUBGRADIENT_TOL.
pub const SUBGRADIENT_TOL: f64 = 1e-9;

/// Componentwise soft shrinkage max(|x| - lambda, 0) * sign(x).
pub fn soft_shrinkage(x: &[f64], lambda: f64) -> Vec<f64> {
    x.iter().map(|&v| shrink(v, lambda)).collect()
}

/// Shrink `xstar` into `out` without allocating.
pub fn soft_shrinkage_into(xstar: &[f64], lambda: f64, out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(xstar) {
        *o = shrink(v, lambda);
    }
}

#[inline]
pub fn shrink(v: f64, lambda: f64) -> f64 {
    let t = v.abs() - lambda;
    if t > 0.0 {
        t * v.signum()
    } else {
        0.0
    }
}

/// f(x) = lambda*||x||_1 + 1/2*||x||_2^2.
pub fn f_value(x: &[f64], lambda: f64) -> f64 {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    lambda * l1 + 0.5 * norm2_sq(x)
}

/// f*(x*) = 1/2*||S_lambda(x*)||_2^2. Its gradient is S_lambda(x*).
pub fn f_conj_value(xstar: &[f64], lambda: f64) -> f64 {
    0.5 * xstar
        .iter()
        .map(|&v| {
            let s = shrink(v, lambda);
            s * s
        })
        .sum::<f64>()
}

/// Bregman distance D_f^{x*}(x, y) = f*(x*) - <x*, y> + f(y) for a
/// subgradient x* of f at x. The (x, x*) pair is validated as
/// ||S_lambda(x*) - x||_inf <= 1e-9; an inconsistent pair would produce a
/// meaningless (possibly negative) value.
pub fn bregman_distance(x: &[f64], xstar: &[f64], y: &[f64], lambda: f64) -> Result<f64> {
    if xstar.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "bregman x*",
            expected: x.len(),
            got: xstar.len(),
        });
    }
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "bregman y",
            expected: x.len(),
            got: y.len(),
        });
    }
    let deviation = x
        .iter()
        .zip(xstar)
        .map(|(&xi, &si)| (shrink(si, lambda) - xi).abs())
        .fold(0.0, f64::max);
    if deviation > SUBGRADIENT_TOL {
        return Err(Error::SubgradientMismatch {
            deviation,
            tol: SUBGRADIENT_TOL,
        });
    }
    Ok(f_conj_value(xstar, lambda) - dot(xstar, y) + f_value(y, lambda))
}

/// Objective of the dual quadratic program,
/// g(y) = 1/2*||S_lambda(A^T y)||^2 - <b, y>. Diagnostic only.
pub fn dual_objective(y: &[f64], a: &DenseMatrix, b: &[f64], lambda: f64) -> Result<f64> {
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "dual variable",
            expected: a.rows(),
            got: y.len(),
        });
    }
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "dual rhs",
            expected: a.rows(),
            got: b.len(),
        });
    }
    let z = a.matvec_transpose(y)?;
    Ok(f_conj_value(&z, lambda) - dot(b, y))
}

/// (||Ax - b||_2, ||Ax - b||_2 / ||b||_2).
pub fn residual_norms(a: &DenseMatrix, x: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "residual rhs",
            expected: a.rows(),
            got: b.len(),
        });
    }
    let ax = a.matvec(x)?;
    let abs = ax
        .iter()
        .zip(b)
        .map(|(axi, bi)| {
            let r = axi - bi;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let nb = norm2(b);
    if nb == 0.0 {
        return Err(Error::ZeroRhs);
    }
    Ok((abs, abs / nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian_matrix, gaussian_vec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shrinkage_componentwise() {
        assert_eq!(soft_shrinkage(&[2.0, -0.5, 0.0], 1.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(
            soft_shrinkage(&[1.5, -3.0, 0.2], 0.25),
            vec![1.25, -2.75, 0.0]
        );
    }

    #[test]
    fn shrinkage_with_zero_lambda_is_identity() {
        let x = [1.5, -2.25, 0.0, 1e-300];
        for (s, v) in soft_shrinkage(&x, 0.0).iter().zip(&x) {
            assert_eq!(s.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn f_values() {
        assert_eq!(f_value(&[0.0, 0.0], 3.0), 0.0);
        assert_eq!(f_value(&[1.0, -1.0], 1.0), 3.0);
        assert_eq!(f_value(&[3.0], 2.0), 10.5);
    }

    #[test]
    fn f_conj_values() {
        assert_eq!(f_conj_value(&[0.0], 1.0), 0.0);
        assert_eq!(f_conj_value(&[2.0], 1.0), 0.5);
        assert_eq!(f_conj_value(&[0.5, -0.2], 1.0), 0.0);
    }

    #[test]
    fn bregman_reduces_to_half_squared_distance_when_lambda_zero() {
        let x = [1.0, -2.0, 0.5];
        let y = [0.25, 1.0, -1.0];
        let d = bregman_distance(&x, &x, &y, 0.0).unwrap();
        let half_sq = 0.5
            * x.iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        assert!((d - half_sq).abs() < 1e-14);
    }

    #[test]
    fn bregman_distance_to_itself_is_zero() {
        let xstar = [2.0, -0.3, 1.1];
        let x = soft_shrinkage(&xstar, 0.7);
        let d = bregman_distance(&x, &xstar, &x, 0.7).unwrap();
        assert!(d.abs() < 1e-14);
    }

    #[test]
    fn bregman_hand_value() {
        // x = 1, x* = 2 = x + lambda*s with s = 1, y = -1, lambda = 1:
        // 1/2*(1-(-1))^2 + 1*(|-1| - 1*(-1)) = 2 + 2 = 4,
        // cross-checked against the Fenchel form.
        let d = bregman_distance(&[1.0], &[2.0], &[-1.0], 1.0).unwrap();
        assert!((d - 4.0).abs() < 1e-14);
        let fenchel = f_conj_value(&[2.0], 1.0) - 2.0 * -1.0 + f_value(&[-1.0], 1.0);
        assert!((d - fenchel).abs() < 1e-14);
    }

    #[test]
    fn bregman_rejects_inconsistent_pair() {
        match bregman_distance(&[1.0], &[5.0], &[0.0], 1.0) {
            Err(Error::SubgradientMismatch { .. }) => {}
            other => panic!("expected SubgradientMismatch, got {other:?}"),
        }
    }

    #[test]
    fn dual_objective_zero_at_origin() {
        let a = gaussian_matrix(3, 3, 8);
        let b = gaussian_vec(3, 9);
        assert_eq!(dual_objective(&[0.0; 3], &a, &b, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn dual_objective_linear_when_shrinkage_annihilates() {
        let a = gaussian_matrix(3, 3, 8);
        let b = gaussian_vec(3, 9);
        let y = [0.1, -0.2, 0.05];
        // lambda dominates every |(A^T y)_j|
        let g = dual_objective(&y, &a, &b, 1e3).unwrap();
        assert!((g + dot(&b, &y)).abs() < 1e-14);
    }

    #[test]
    fn dual_objective_gradient_matches_finite_differences() {
        // grad g(y) = A S_lambda(A^T y) - b, checked by central differences
        // on a seeded instance away from the shrinkage kinks
        let a = gaussian_matrix(3, 3, 21);
        let b = gaussian_vec(3, 22);
        let lambda = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y: Vec<f64> = (0..3).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let z = a.matvec_transpose(&y).unwrap();
        assert!(
            z.iter().all(|v| (v.abs() - lambda).abs() > 1e-3),
            "instance too close to a kink for finite differences"
        );
        let sz = soft_shrinkage(&z, lambda);
        let grad: Vec<f64> = a
            .matvec(&sz)
            .unwrap()
            .iter()
            .zip(&b)
            .map(|(v, bi)| v - bi)
            .collect();
        let h = 1e-6;
        for i in 0..3 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            let fd = (dual_objective(&yp, &a, &b, lambda).unwrap()
                - dual_objective(&ym, &a, &b, lambda).unwrap())
                / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5, "component {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn residuals_at_solution_and_origin() {
        let a = gaussian_matrix(5, 3, 30);
        let xhat = gaussian_vec(3, 31);
        let b = a.matvec(&xhat).unwrap();
        let (abs, rel) = residual_norms(&a, &xhat, &b).unwrap();
        assert!(abs < 1e-12 && rel < 1e-12);
        let (abs0, rel0) = residual_norms(&a, &[0.0; 3], &b).unwrap();
        assert!((abs0 - norm2(&b)).abs() < 1e-12);
        assert!((rel0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_zero_rhs_rejected() {
        let a = gaussian_matrix(2, 2, 1);
        assert!(matches!(
            residual_norms(&a, &[0.0; 2], &[0.0; 2]),
            Err(Error::ZeroRhs)
        ));
    }
}

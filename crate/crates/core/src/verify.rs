//! Self-checks pairing closed forms with independent oracles on small
//! instances: exhaustive batch enumeration against the moment formulas,
//! the specialization chain, the exact sigma_max(T) formula against dense
//! SVD, the gamma error bound along trajectories, and the expected
//! one-step descent inequality. The `verify` CLI command runs all of
//! them.

use crate::convex::{bregman_distance, residual_norms, soft_shrinkage};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::problems::generate_gaussian;
use crate::sampling::{
    build_variant, expected_sampling_matrix, sample_batch, second_moment_matrix, BatchDraw,
    SamplingScheme, Variant,
};
use crate::solvers::{rk_step, rska_step, rsk_step, SolverState};
use crate::theory::{gamma_bound, sigma_max_t_exact_svd, t_matrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// All ordered batches of length eta over m rows, with their
/// probabilities under the scheme. Guarded to m^eta <= 10^6.
pub fn enumerate_batches(scheme: &SamplingScheme, eta: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let m = scheme.len();
    let total = (m as f64).powi(eta as i32);
    if total > 1e6 {
        return Err(Error::TooLarge {
            cols: total as usize,
            max_cols: 1_000_000,
        });
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut idx = vec![0usize; eta];
    loop {
        let prob: f64 = idx.iter().map(|&i| scheme.probabilities()[i]).product();
        out.push((idx.clone(), prob));
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == eta {
                return Ok(out);
            }
            idx[pos] += 1;
            if idx[pos] < m {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn batch_matrix(scheme: &SamplingScheme, a: &DenseMatrix, indices: &[usize]) -> Vec<f64> {
    // M = (1/eta) sum_i w_i e_i e_i^T / ||a_i||^2, diagonal
    let m = a.rows();
    let mut diag = vec![0.0; m];
    for &i in indices {
        diag[i] += scheme.weight(i) / a.row_norm_sq(i) / indices.len() as f64;
    }
    diag
}

/// Exhaustively enumerated E[M_k] (diagonal) and E[M_k^T A A^T M_k].
pub fn enumerate_moments(
    scheme: &SamplingScheme,
    a: &DenseMatrix,
    eta: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let m = a.rows();
    let gram = a.gram_aat();
    let mut first = vec![0.0; m * m];
    let mut second = vec![0.0; m * m];
    for (indices, prob) in enumerate_batches(scheme, eta)? {
        let diag = batch_matrix(scheme, a, &indices);
        for i in 0..m {
            first[i * m + i] += prob * diag[i];
            for j in 0..m {
                second[i * m + j] += prob * diag[i] * gram.get(i, j) * diag[j];
            }
        }
    }
    Ok((
        DenseMatrix::from_rows(m, m, first)?,
        DenseMatrix::from_rows(m, m, second)?,
    ))
}

/// Exhaustively enumerated E[D_f^{x*_{k+1}}(x_{k+1}, xhat)] over all
/// batches from the given state.
pub fn enumerate_expected_bregman_after_step(
    state: &SolverState,
    a: &DenseMatrix,
    b: &[f64],
    scheme: &SamplingScheme,
    eta: usize,
    lambda: f64,
    xhat: &[f64],
) -> Result<f64> {
    let mut acc = 0.0;
    for (indices, prob) in enumerate_batches(scheme, eta)? {
        let batch = BatchDraw::new(indices, a.rows())?;
        let next = rska_step(state, a, b, &batch, scheme, lambda)?;
        acc += prob * bregman_distance(&next.x, &next.xstar, xhat, lambda)?;
    }
    Ok(acc)
}

fn max_abs_diff(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
    x.entries()
        .iter()
        .zip(y.entries())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Enumerated moments match the closed forms to `tol` on a small seeded
/// instance, for a coupled uniform scheme (v1) and a coupled weighted
/// scheme (v4).
pub fn check_moment_enumeration(seed: u64, tol: f64) -> CheckOutcome {
    let run = || -> Result<f64> {
        let problem = generate_gaussian(4, 3, 2, seed)?;
        let a = &problem.a;
        let eta = 2;
        let mut worst = 0.0f64;
        for (variant, vseed) in [(Variant::V1, 0), (Variant::V4, seed ^ 0xA5)] {
            let scheme = build_variant(a, variant, eta, vseed)?;
            let (e1, e2) = enumerate_moments(&scheme, a, eta)?;
            let first = expected_sampling_matrix(&scheme, a)?;
            let second = second_moment_matrix(&scheme, a, eta)?;
            worst = worst.max(max_abs_diff(&e1, &first));
            worst = worst.max(max_abs_diff(&e2, &second));
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => CheckOutcome {
            name: "moment-enumeration",
            passed: worst <= tol,
            detail: format!("max deviation {worst:.3e} (tol {tol:.0e})"),
        },
        Err(e) => CheckOutcome {
            name: "moment-enumeration",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// RSKA(eta = 1, v1) == RSK(w = 1) == RK at lambda = 0, bit for bit over
/// `steps` iterations.
pub fn check_specialization_chain(seed: u64, steps: usize) -> CheckOutcome {
    let run = || -> Result<bool> {
        let problem = generate_gaussian(20, 10, 5, seed)?;
        let a = &problem.a;
        let b = &problem.b;
        let scheme = build_variant(a, Variant::V1, 1, 0)?;
        for lambda in [1.0, 0.0] {
            let mut s_rska = SolverState::zeros(10);
            let mut s_rsk = SolverState::zeros(10);
            let mut s_rk = SolverState::zeros(10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            for _ in 0..steps {
                let batch = sample_batch(&scheme, 1, &mut rng);
                let row = batch.indices()[0];
                s_rska = rska_step(&s_rska, a, b, &batch, &scheme, lambda)?;
                s_rsk = rsk_step(&s_rsk, a, b, row, 1.0, lambda)?;
                let bits_equal = |u: &[f64], v: &[f64]| {
                    u.iter().zip(v).all(|(x, y)| x.to_bits() == y.to_bits())
                };
                if !bits_equal(&s_rska.x, &s_rsk.x) || !bits_equal(&s_rska.xstar, &s_rsk.xstar) {
                    return Ok(false);
                }
                if lambda == 0.0 {
                    s_rk = rk_step(&s_rk, a, b, row, 1.0)?;
                    if !bits_equal(&s_rsk.x, &s_rk.x) {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    };
    match run() {
        Ok(passed) => CheckOutcome {
            name: "specialization-chain",
            passed,
            detail: format!("{steps} steps, lambda in {{1, 0}}"),
        },
        Err(e) => CheckOutcome {
            name: "specialization-chain",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Closed-form sigma_max(T) for uniform weights matches dense SVD.
pub fn check_sigma_t_exact(seed: u64, instances: usize, tol: f64) -> CheckOutcome {
    let run = || -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for i in 0..instances {
            let m = 4 + (i % 5);
            let n = 3 + (i % 4);
            let problem = generate_gaussian(m, n, 1, seed.wrapping_add(i as u64))?;
            let a = &problem.a;
            let alpha = 0.3 + 2.7 * rng.random::<f64>();
            let eta = 1 + (rng.random::<f64>() * 7.0) as usize;
            let sigma_a = crate::matrix::spectral_norm(a, 1e-13, 50_000)?;
            let closed = crate::theory::sigma_max_t_bounds(
                alpha,
                sigma_a,
                a.frob_norm_sq(),
                alpha,
                eta,
                true,
            )
            .upper;
            let svd = sigma_max_t_exact_svd(&vec![alpha; m], a, alpha, eta)?;
            worst = worst.max((closed - svd).abs());
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => CheckOutcome {
            name: "sigma-t-exact",
            passed: worst <= tol,
            detail: format!("{instances} instances, max deviation {worst:.3e} (tol {tol:.0e})"),
        },
        Err(e) => CheckOutcome {
            name: "sigma-t-exact",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// D_f^{x_k*}(x_k, xhat) <= gamma ||A x_k - b||^2 along an RSK trajectory
/// on an instance with exactly computable gamma.
pub fn check_gamma_trajectory(seed: u64, iters: usize) -> CheckOutcome {
    let run = || -> Result<(bool, f64)> {
        let problem = generate_gaussian(8, 5, 3, seed)?;
        let a = &problem.a;
        let b = &problem.b;
        let xhat = problem.xhat.as_deref().expect("generated");
        let lambda = 0.8;
        let gamma = gamma_bound(a, xhat, lambda)?;
        let scheme = build_variant(a, Variant::V1, 1, 0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let mut state = SolverState::zeros(5);
        let mut worst_ratio = 0.0f64;
        for _ in 0..iters {
            let batch = sample_batch(&scheme, 1, &mut rng);
            state = rska_step(&state, a, b, &batch, &scheme, lambda)?;
            let d = bregman_distance(&state.x, &state.xstar, xhat, lambda)?;
            let (abs, _) = residual_norms(a, &state.x, b)?;
            let bound = gamma * abs * abs;
            if d > bound * (1.0 + 1e-9) {
                return Ok((false, d / bound));
            }
            if bound > 0.0 {
                worst_ratio = worst_ratio.max(d / bound);
            }
        }
        Ok((true, worst_ratio))
    };
    match run() {
        Ok((passed, ratio)) => CheckOutcome {
            name: "gamma-trajectory",
            passed,
            detail: format!("{iters} iterations, worst D/(gamma r^2) = {ratio:.4}"),
        },
        Err(e) => CheckOutcome {
            name: "gamma-trajectory",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Exhaustively enumerated E[D after one step] satisfies the descent
/// bound D - (alpha/||A||_F^2)(1 - sigma_max(T)) ||A x - b||^2 at random
/// valid states, for coupled schemes.
pub fn check_expected_descent(seed: u64, states: usize, tol: f64) -> CheckOutcome {
    let run = || -> Result<(bool, f64)> {
        let problem = generate_gaussian(4, 3, 2, seed)?;
        let a = &problem.a;
        let b = &problem.b;
        let xhat = problem.xhat.as_deref().expect("generated");
        let eta = 2;
        let lambda = 0.6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
        let mut worst_margin = f64::INFINITY;
        for (variant, vseed) in [(Variant::V1, 0u64), (Variant::V4, seed ^ 0x33)] {
            let scheme = build_variant(a, variant, eta, vseed)?;
            let sigma_t = sigma_max_t_exact_svd(scheme.weights(), a, scheme.alpha(), eta)?;
            for _ in 0..states {
                let xstar: Vec<f64> =
                    (0..3).map(|_| 6.0 * rng.random::<f64>() - 3.0).collect();
                let state = SolverState {
                    x: soft_shrinkage(&xstar, lambda),
                    xstar,
                    k: 0,
                };
                let d_now = bregman_distance(&state.x, &state.xstar, xhat, lambda)?;
                let (abs, _) = residual_norms(a, &state.x, b)?;
                let rhs = d_now
                    - scheme.alpha() / a.frob_norm_sq() * (1.0 - sigma_t) * abs * abs;
                let expected =
                    enumerate_expected_bregman_after_step(&state, a, b, &scheme, eta, lambda, xhat)?;
                worst_margin = worst_margin.min(rhs - expected);
                if expected > rhs + tol {
                    return Ok((false, rhs - expected));
                }
            }
        }
        Ok((true, worst_margin))
    };
    match run() {
        Ok((passed, margin)) => CheckOutcome {
            name: "expected-descent",
            passed,
            detail: format!("worst margin {margin:.3e} (tol {tol:.0e})"),
        },
        Err(e) => CheckOutcome {
            name: "expected-descent",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// The full verification battery.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_moment_enumeration(seed, 1e-12),
        check_specialization_chain(seed, 100),
        check_sigma_t_exact(seed, 20, 1e-10),
        check_gamma_trajectory(seed, 300),
        check_expected_descent(seed, 20, 1e-10),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_covers_all_batches_with_unit_mass() {
        let problem = generate_gaussian(3, 2, 1, 5).unwrap();
        let scheme = build_variant(&problem.a, Variant::V1, 2, 0).unwrap();
        let batches = enumerate_batches(&scheme, 2).unwrap();
        assert_eq!(batches.len(), 9);
        let total: f64 = batches.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_checks_pass() {
        for outcome in run_all(0xBEEF) {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }
}

//! Convergence certificates: the T matrix and its largest singular value,
//! the rate constant L(alpha), the optimal relaxation alpha*, the
//! contraction factor q, the error-bound constant gamma, the noisy-case
//! contraction (a, c) with its error horizon, and mini-batch guidance.

use crate::error::{Error, Result};
use crate::matrix::{
    min_singular_over_column_subsets, singular_values, spectral_norm, DenseMatrix,
    DEFAULT_SUBSET_CAP,
};
use serde::{Deserialize, Serialize};

/// Power-iteration settings used whenever a certificate needs sigma_max(A).
pub const SPECTRAL_TOL: f64 = 1e-12;
pub const MAX_POWER_ITERS: usize = 20_000;

/// Exact SVD tightening of sigma_max(T) is offered up to this many rows.
pub const EXACT_T_ROW_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    GeneralWeights,
    UniformWeights,
}

/// Weight matrix description for certificate computations. `Uniform`
/// means W = alpha*I with the same alpha as the relaxation parameter.
#[derive(Debug, Clone, Copy)]
pub enum WeightsSpec<'a> {
    Uniform,
    General { weights: &'a [f64], alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaTBounds {
    pub lower: f64,
    pub upper: f64,
}

/// T = (1/(2 eta)) W + (alpha/2)(1 - 1/eta) A A^T / ||A||_F^2, the m-by-m
/// matrix whose largest singular value controls the per-step descent.
pub fn t_matrix(weights: &[f64], a: &DenseMatrix, alpha: f64, eta: usize) -> Result<DenseMatrix> {
    let m = a.rows();
    if weights.len() != m {
        return Err(Error::DimensionMismatch {
            context: "t_matrix weights",
            expected: m,
            got: weights.len(),
        });
    }
    if eta == 0 {
        return Err(Error::InvalidEta {
            eta,
            context: "t_matrix",
        });
    }
    let gram = a.gram_aat();
    let frob_sq = a.frob_norm_sq();
    let diag_coeff = 1.0 / (2.0 * eta as f64);
    let gram_coeff = 0.5 * alpha * (1.0 - 1.0 / eta as f64) / frob_sq;
    DenseMatrix::from_fn(m, m, |i, j| {
        let w = if i == j { diag_coeff * weights[i] } else { 0.0 };
        w + gram_coeff * gram.get(i, j)
    })
}

/// Closed-form bounds on sigma_max(T) from sigma_max(W), sigma_max(A) and
/// ||A||_F^2. For uniform weights (W = alpha*I, so sigma_max(W) = alpha)
/// both bounds coincide with the exact value. The general lower bound is
/// clamped at zero since singular values are nonnegative.
pub fn sigma_max_t_bounds(
    sigma_max_w: f64,
    sigma_max_a: f64,
    frob_sq: f64,
    alpha: f64,
    eta: usize,
    uniform: bool,
) -> SigmaTBounds {
    let spread = alpha / frob_sq * (eta as f64 - 1.0) * sigma_max_a * sigma_max_a;
    let half_inv_eta = 1.0 / (2.0 * eta as f64);
    if uniform {
        let exact = half_inv_eta * (alpha + spread);
        SigmaTBounds {
            lower: exact,
            upper: exact,
        }
    } else {
        SigmaTBounds {
            lower: (half_inv_eta * (sigma_max_w - spread)).max(0.0),
            upper: half_inv_eta * (sigma_max_w + spread),
        }
    }
}

/// sigma_max(T) bounds straight from the matrix and weight description.
pub fn sigma_max_t(
    weights: WeightsSpec<'_>,
    a: &DenseMatrix,
    alpha: f64,
    eta: usize,
) -> Result<SigmaTBounds> {
    if eta == 0 {
        return Err(Error::InvalidEta {
            eta,
            context: "sigma_max_t",
        });
    }
    let sigma_a = spectral_norm(a, SPECTRAL_TOL, MAX_POWER_ITERS)?;
    let frob_sq = a.frob_norm_sq();
    Ok(match weights {
        WeightsSpec::Uniform => sigma_max_t_bounds(alpha, sigma_a, frob_sq, alpha, eta, true),
        WeightsSpec::General { weights, .. } => {
            let sigma_w = weights.iter().fold(0.0, |acc: f64, w| acc.max(w.abs()));
            sigma_max_t_bounds(sigma_w, sigma_a, frob_sq, alpha, eta, false)
        }
    })
}

/// Exact sigma_max(T) by dense SVD; optional tightening for moderate m.
pub fn sigma_max_t_exact_svd(
    weights: &[f64],
    a: &DenseMatrix,
    alpha: f64,
    eta: usize,
) -> Result<f64> {
    if a.rows() > EXACT_T_ROW_CAP {
        return Err(Error::TooLarge {
            cols: a.rows(),
            max_cols: EXACT_T_ROW_CAP,
        });
    }
    let t = t_matrix(weights, a, alpha, eta)?;
    Ok(singular_values(&t)[0])
}

/// L(alpha) = alpha - (alpha/(2 eta)) ((alpha/||A||_F^2)(eta-1) sigma_max(A)^2 + sigma_max(W)).
pub fn rate_l(alpha: f64, eta: usize, sigma_max_a: f64, frob_sq: f64, sigma_max_w: f64) -> f64 {
    let eta_f = eta as f64;
    alpha
        - alpha / (2.0 * eta_f)
            * (alpha / frob_sq * (eta_f - 1.0) * sigma_max_a * sigma_max_a + sigma_max_w)
}

/// The relaxation maximizing L and the value L(alpha*).
///
/// General weights need eta > max(1, sigma_max(W)/2); uniform weights are
/// defined for every eta >= 1 (eta = 1 gives alpha* = 1).
pub fn optimal_alpha(
    regime: Regime,
    eta: usize,
    sigma_max_a: f64,
    frob_sq: f64,
    sigma_max_w: f64,
) -> Result<(f64, f64)> {
    let eta_f = eta as f64;
    let sig_sq = sigma_max_a * sigma_max_a;
    match regime {
        Regime::UniformWeights => {
            if eta == 0 {
                return Err(Error::InvalidEta {
                    eta,
                    context: "optimal_alpha uniform",
                });
            }
            let denom = 1.0 + (eta_f - 1.0) * sig_sq / frob_sq;
            Ok((eta_f / denom, eta_f / (2.0 * denom)))
        }
        Regime::GeneralWeights => {
            if eta_f <= 1.0 || eta_f <= sigma_max_w / 2.0 {
                return Err(Error::InvalidEta {
                    eta,
                    context: "optimal_alpha general weights (need eta > max(1, sigma_max(W)/2))",
                });
            }
            let alpha_star = frob_sq / (sig_sq * (eta_f - 1.0)) * (eta_f - sigma_max_w / 2.0);
            let l_star = frob_sq / (8.0 * sig_sq) * (2.0 * eta_f - sigma_max_w).powi(2)
                / (eta_f * (eta_f - 1.0));
            Ok((alpha_star, l_star))
        }
    }
}

/// q = 1 - L / (gamma * ||A||_F^2), valid only in (0, 1). A value outside
/// signals alpha beyond the admissible interval.
pub fn contraction_q(gamma: f64, l: f64, frob_sq: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::OutOfRange {
            quantity: "gamma",
            value: gamma,
            constraint: "gamma > 0",
        });
    }
    let q = 1.0 - l / (gamma * frob_sq);
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::OutOfRange {
            quantity: "q",
            value: q,
            constraint: "q in (0,1); alpha must satisfy 0 < alpha < 2(eta - sigma_max(W)/2)||A||_F^2 / (sigma_max(A)^2 (eta-1))",
        });
    }
    Ok(q)
}

/// gamma = (1/sigma_tilde_min(A)^2) * (|xhat|_min + 2 lambda) / |xhat|_min
/// with |xhat|_min the smallest nonzero magnitude of xhat.
pub fn gamma_bound(a: &DenseMatrix, xhat: &[f64], lambda: f64) -> Result<f64> {
    gamma_bound_with_cap(a, xhat, lambda, DEFAULT_SUBSET_CAP)
}

pub fn gamma_bound_with_cap(
    a: &DenseMatrix,
    xhat: &[f64],
    lambda: f64,
    max_cols: usize,
) -> Result<f64> {
    let xmin = xhat
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    if !xmin.is_finite() {
        return Err(Error::ZeroVector);
    }
    let sigma_tilde = min_singular_over_column_subsets(a, max_cols)?;
    if sigma_tilde <= 0.0 {
        return Err(Error::OutOfRange {
            quantity: "sigma_tilde_min",
            value: sigma_tilde,
            constraint: "sigma_tilde_min > 0 (some column submatrix is singular)",
        });
    }
    Ok((xmin + 2.0 * lambda) / (xmin * sigma_tilde * sigma_tilde))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyCertificate {
    pub a: f64,
    pub c: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub horizon: f64,
}

/// Noisy-case contraction a, amplification c and horizon c/(1-a) * delta^2.
///
/// Uses the exact sigma_max(T) for uniform weights and the upper bound for
/// general weights, which makes the certificate conservative. `epsilon`
/// defaults to (1 - sigma_max(T))/2, splitting the admissible interval.
pub fn noisy_rate(
    alpha: f64,
    eta: usize,
    weights: WeightsSpec<'_>,
    a: &DenseMatrix,
    gamma: f64,
    epsilon: Option<f64>,
    delta: f64,
) -> Result<NoisyCertificate> {
    if eta == 0 {
        return Err(Error::InvalidEta {
            eta,
            context: "noisy_rate",
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::OutOfRange {
            quantity: "alpha",
            value: alpha,
            constraint: "alpha > 0",
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::OutOfRange {
            quantity: "gamma",
            value: gamma,
            constraint: "gamma > 0",
        });
    }
    if delta < 0.0 {
        return Err(Error::OutOfRange {
            quantity: "delta",
            value: delta,
            constraint: "delta >= 0",
        });
    }
    let sigma_a = spectral_norm(a, SPECTRAL_TOL, MAX_POWER_ITERS)?;
    let frob_sq = a.frob_norm_sq();
    let eta_f = eta as f64;

    let (sigma_t, sigma_t_prime) = match weights {
        WeightsSpec::Uniform => {
            let st = sigma_max_t_bounds(alpha, sigma_a, frob_sq, alpha, eta, true).upper;
            // smallest eigenvalue of T maps from the smallest eigenvalue of
            // A A^T, which is zero when m > n
            let mu_min = if a.rows() > a.cols() {
                0.0
            } else {
                let smin = *singular_values(a).last().expect("nonempty spectrum");
                smin * smin
            };
            let lam_min =
                alpha / (2.0 * eta_f) * (1.0 + (eta_f - 1.0) * mu_min / frob_sq);
            let stp = (st - 0.5).abs().max((lam_min - 0.5).abs());
            (st, stp)
        }
        WeightsSpec::General { weights, .. } => {
            let sigma_w = weights.iter().fold(0.0, |acc: f64, w| acc.max(w.abs()));
            let st = sigma_max_t_bounds(sigma_w, sigma_a, frob_sq, alpha, eta, false).upper;
            // T' = (1/(2 eta))(W - eta I) + (alpha/2)(1 - 1/eta) AA^T/||A||_F^2
            let w_dev = weights
                .iter()
                .fold(0.0, |acc: f64, w| acc.max((w - eta_f).abs()));
            let stp = w_dev / (2.0 * eta_f)
                + 0.5 * alpha * (1.0 - 1.0 / eta_f) * sigma_a * sigma_a / frob_sq;
            (st, stp)
        }
    };

    let eps = epsilon.unwrap_or((1.0 - sigma_t) / 2.0);
    if !(eps > 0.0 && eps < 1.0 - sigma_t) {
        return Err(Error::OutOfRange {
            quantity: "epsilon",
            value: eps,
            constraint: "0 < epsilon < 1 - sigma_max(T); alpha must satisfy the noisy admissibility bound",
        });
    }
    let contraction = 1.0 - alpha / gamma * (1.0 - eps - sigma_t) / frob_sq;
    if !(contraction > 0.0 && contraction < 1.0) {
        return Err(Error::OutOfRange {
            quantity: "a",
            value: contraction,
            constraint: "a in (0,1)",
        });
    }
    let c = alpha / frob_sq * (sigma_t + sigma_t_prime * sigma_t_prime / eps);
    Ok(NoisyCertificate {
        a: contraction,
        c,
        epsilon: eps,
        delta,
        horizon: c / (1.0 - contraction) * delta * delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchGuidance {
    #[serde(rename = "H_eta")]
    pub h_eta: f64,
    #[serde(rename = "H_1")]
    pub h_1: f64,
    #[serde(rename = "H_inf")]
    pub h_inf: f64,
    pub speedup_cap: f64,
    pub eta_cap: usize,
}

/// H(eta) = 2/eta + 2(1 - 1/eta) sigma_max(A)^2/||A||_F^2 (inverse of the
/// uniform-weight L(alpha*)), with the batch-size cap ||A||_F^2/sigma_max^2
/// beyond which averaging cannot pay off.
pub fn batch_guidance(a: &DenseMatrix, eta: usize) -> Result<BatchGuidance> {
    if eta == 0 {
        return Err(Error::InvalidEta {
            eta,
            context: "batch_guidance",
        });
    }
    let sigma_a = spectral_norm(a, SPECTRAL_TOL, MAX_POWER_ITERS)?;
    let frob_sq = a.frob_norm_sq();
    let ratio = sigma_a * sigma_a / frob_sq;
    let eta_f = eta as f64;
    let cap = 1.0 / ratio;
    Ok(BatchGuidance {
        h_eta: 2.0 / eta_f + 2.0 * (1.0 - 1.0 / eta_f) * ratio,
        h_1: 2.0,
        h_inf: 2.0 * ratio,
        speedup_cap: cap,
        eta_cap: cap.ceil() as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityTable {
    pub rsk_iters: f64,
    pub rska_iters: f64,
    pub linbreg_iters: f64,
    pub rsk_cost_per_iter: usize,
    pub rska_cost_per_iter: usize,
    pub linbreg_cost_per_iter: usize,
}

/// Iteration complexities to accuracy eps_target and per-iteration costs
/// in matrix-entry accesses (n, eta*n, m*n).
pub fn complexity_table(
    a: &DenseMatrix,
    gamma: f64,
    eta: usize,
    eps_target: f64,
) -> Result<ComplexityTable> {
    if !(gamma > 0.0) || !(eps_target > 0.0) || eps_target >= 1.0 {
        return Err(Error::OutOfRange {
            quantity: "complexity inputs",
            value: eps_target,
            constraint: "gamma > 0 and 0 < eps_target < 1",
        });
    }
    let sigma_a = spectral_norm(a, SPECTRAL_TOL, MAX_POWER_ITERS)?;
    let frob_sq = a.frob_norm_sq();
    let log_term = (1.0 / eps_target).ln();
    let (_, l_star) = optimal_alpha(Regime::UniformWeights, eta, sigma_a, frob_sq, f64::NAN)?;
    Ok(ComplexityTable {
        rsk_iters: 2.0 * gamma * frob_sq * log_term,
        rska_iters: gamma * frob_sq / l_star * log_term,
        linbreg_iters: 2.0 * gamma * sigma_a * sigma_a * log_term,
        rsk_cost_per_iter: a.cols(),
        rska_cost_per_iter: eta * a.cols(),
        linbreg_cost_per_iter: a.rows() * a.cols(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateTolerances {
    pub spectral_tol: f64,
    pub coupling_tol: f64,
    pub subgradient_tol: f64,
}

impl Default for CertificateTolerances {
    fn default() -> Self {
        CertificateTolerances {
            spectral_tol: SPECTRAL_TOL,
            coupling_tol: crate::sampling::COUPLING_TOL,
            subgradient_tol: crate::convex::SUBGRADIENT_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateCertificate {
    pub eta: usize,
    pub regime: Regime,
    pub alpha: f64,
    pub alpha_star: Option<f64>,
    #[serde(rename = "L_star")]
    pub l_star: Option<f64>,
    #[serde(rename = "L")]
    pub l_alpha: f64,
    #[serde(rename = "sigma_T")]
    pub sigma_t: SigmaTBounds,
    pub gamma: Option<f64>,
    pub q: Option<f64>,
    /// The eta = 1 general-weights certificate extrapolates the eta > 1
    /// theorem and is labeled as such.
    pub extrapolated: bool,
    pub noisy: Option<NoisyCertificate>,
    pub guidance: BatchGuidance,
    pub tolerances: CertificateTolerances,
}

#[derive(Debug, Clone, Default)]
pub struct CertifyOptions<'a> {
    pub lambda: f64,
    /// Operating relaxation; defaults to alpha* (uniform regime only).
    pub alpha: Option<f64>,
    /// Error-bound constant override for when xhat is absent or the
    /// column count exceeds the enumeration cap.
    pub gamma: Option<f64>,
    pub xhat: Option<&'a [f64]>,
    /// Noise radius; triggers the noisy certificate when gamma is known.
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
}

/// Assemble the full certificate record emitted by the `rate` CLI command.
pub fn certify(
    a: &DenseMatrix,
    eta: usize,
    weights: WeightsSpec<'_>,
    opts: &CertifyOptions<'_>,
) -> Result<RateCertificate> {
    let sigma_a = spectral_norm(a, SPECTRAL_TOL, MAX_POWER_ITERS)?;
    let frob_sq = a.frob_norm_sq();

    let (regime, alpha, alpha_star, l_star, sigma_w, extrapolated) = match weights {
        WeightsSpec::Uniform => {
            let (astar, lstar) =
                optimal_alpha(Regime::UniformWeights, eta, sigma_a, frob_sq, f64::NAN)?;
            let alpha = opts.alpha.unwrap_or(astar);
            (
                Regime::UniformWeights,
                alpha,
                Some(astar),
                Some(lstar),
                alpha,
                false,
            )
        }
        WeightsSpec::General { weights: w, alpha } => {
            let sigma_w = w.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
            let opt = optimal_alpha(Regime::GeneralWeights, eta, sigma_a, frob_sq, sigma_w).ok();
            let operating = opts.alpha.unwrap_or(alpha);
            (
                Regime::GeneralWeights,
                operating,
                opt.map(|(a, _)| a),
                opt.map(|(_, l)| l),
                sigma_w,
                eta == 1,
            )
        }
    };
    if !(alpha > 0.0) {
        return Err(Error::OutOfRange {
            quantity: "alpha",
            value: alpha,
            constraint: "alpha > 0",
        });
    }

    let uniform = matches!(weights, WeightsSpec::Uniform);
    let sigma_t = sigma_max_t_bounds(sigma_w, sigma_a, frob_sq, alpha, eta, uniform);
    let l_alpha = rate_l(alpha, eta, sigma_a, frob_sq, sigma_w);

    let gamma = match opts.gamma {
        Some(g) => Some(g),
        None => match opts.xhat {
            Some(xhat) if a.cols() <= DEFAULT_SUBSET_CAP => {
                Some(gamma_bound(a, xhat, opts.lambda)?)
            }
            _ => None,
        },
    };
    let q = gamma.map(|g| contraction_q(g, l_alpha, frob_sq)).transpose()?;
    let noisy = match (gamma, opts.delta) {
        (Some(g), Some(delta)) => Some(noisy_rate(
            alpha,
            eta,
            weights,
            a,
            g,
            opts.epsilon,
            delta,
        )?),
        _ => None,
    };

    Ok(RateCertificate {
        eta,
        regime,
        alpha,
        alpha_star,
        l_star,
        l_alpha,
        sigma_t,
        gamma,
        q,
        extrapolated,
        noisy,
        guidance: batch_guidance(a, eta)?,
        tolerances: CertificateTolerances::default(),
    })
}

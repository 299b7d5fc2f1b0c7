//! Row-selection schemes: probabilities, weights, the coupling condition
//! P W D^-2 = (alpha/||A||_F^2) I tying them to the row norms, the four
//! experiment variants, seeded batch draws, and the closed-form first and
//! second moments of the weighted sampling matrix.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::theory::{optimal_alpha, Regime};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default relative tolerance for the coupling check.
pub const COUPLING_TOL: f64 = 1e-10;

/// Random weights for v3/v4 are floored here; unguarded weights near zero
/// make the v4 probabilities degenerate.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Maximum deviation of a probability vector from the simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
    V3,
    V4,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::V1 => write!(f, "v1"),
            Variant::V2 => write!(f, "v2"),
            Variant::V3 => write!(f, "v3"),
            Variant::V4 => write!(f, "v4"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            "v4" => Ok(Variant::V4),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

/// Row-sampling distribution and weights. Immutable after construction;
/// the cumulative table is precomputed for inverse-CDF draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingScheme {
    probabilities: Vec<f64>,
    weights: Vec<f64>,
    alpha: f64,
    coupled: bool,
    variant: Option<Variant>,
    seed: u64,
    cumulative: Vec<f64>,
}

impl SamplingScheme {
    pub fn new(probabilities: Vec<f64>, weights: Vec<f64>, alpha: f64, coupled: bool) -> Result<Self> {
        Self::with_provenance(probabilities, weights, alpha, coupled, None, 0)
    }

    pub fn with_provenance(
        probabilities: Vec<f64>,
        weights: Vec<f64>,
        alpha: f64,
        coupled: bool,
        variant: Option<Variant>,
        seed: u64,
    ) -> Result<Self> {
        if probabilities.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "scheme weights",
                expected: probabilities.len(),
                got: weights.len(),
            });
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidConfig(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidConfig(
                "weights must be finite and positive".into(),
            ));
        }
        if !(alpha > 0.0) {
            return Err(Error::OutOfRange {
                quantity: "alpha",
                value: alpha,
                constraint: "alpha > 0",
            });
        }
        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p;
            cumulative.push(acc);
        }
        Ok(SamplingScheme {
            probabilities,
            weights,
            alpha,
            coupled,
            variant,
            seed,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn coupled(&self) -> bool {
        self.coupled
    }

    pub fn variant(&self) -> Option<Variant> {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Run-record form {variant, alpha, seed, coupled}.
    pub fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor {
            variant: self.variant,
            alpha: self.alpha,
            seed: self.seed,
            coupled: self.coupled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeDescriptor {
    pub variant: Option<Variant>,
    pub alpha: f64,
    pub seed: u64,
    pub coupled: bool,
}

/// A batch of row indices drawn with replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchDraw {
    indices: Vec<usize>,
}

impl BatchDraw {
    pub fn new(indices: Vec<usize>, rows: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidConfig(format!(
                "batch index {bad} out of range for {rows} rows"
            )));
        }
        Ok(BatchDraw { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Build one of the paper's scheme variants for the given matrix:
///
/// - v1: w_i = 1, alpha = 1, p_i = ||a_i||^2/||A||_F^2 (coupled)
/// - v2: standard probabilities, W = alpha* I with the optimal uniform
///   relaxation for the batch size (coupled)
/// - v3: standard probabilities, w_i i.i.d. uniform on [0,1] (not coupled)
/// - v4: w_i i.i.d. uniform on [0,1], p_i proportional to ||a_i||^2/w_i
///   (coupled)
///
/// v3/v4 weights are floored at `WEIGHT_FLOOR` and drawn from the given
/// seed. The stored alpha always uses the coupling normalization
/// P W D^-2 = (alpha/||A||_F^2) I, so for v4 it equals
/// ||A||_F^2 * (sum_j ||a_j||^2/w_j)^-1.
pub fn build_variant(
    a: &DenseMatrix,
    variant: Variant,
    eta: usize,
    seed: u64,
) -> Result<SamplingScheme> {
    build_variant_with_alpha(a, variant, eta, seed, None)
}

/// Like [`build_variant`] but with an explicit uniform relaxation for the
/// weight matrix W = alpha I (variants v1/v2 only).
pub fn build_variant_with_alpha(
    a: &DenseMatrix,
    variant: Variant,
    eta: usize,
    seed: u64,
    alpha_override: Option<f64>,
) -> Result<SamplingScheme> {
    a.require_nonzero_rows()?;
    if eta == 0 {
        return Err(Error::InvalidEta {
            eta,
            context: "build_variant",
        });
    }
    let m = a.rows();
    let frob_sq = a.frob_norm_sq();
    let standard_p: Vec<f64> = (0..m).map(|i| a.row_norm_sq(i) / frob_sq).collect();

    if alpha_override.is_some() && !matches!(variant, Variant::V1 | Variant::V2) {
        return Err(Error::InvalidConfig(
            "alpha override only applies to the uniform-weight variants v1/v2".into(),
        ));
    }

    match variant {
        Variant::V1 | Variant::V2 => {
            let alpha = match alpha_override {
                Some(al) => al,
                None => match variant {
                    Variant::V1 => 1.0,
                    Variant::V2 => {
                        let sigma = crate::matrix::spectral_norm(
                            a,
                            crate::theory::SPECTRAL_TOL,
                            crate::theory::MAX_POWER_ITERS,
                        )?;
                        optimal_alpha(Regime::UniformWeights, eta, sigma, frob_sq, f64::NAN)?.0
                    }
                    _ => unreachable!(),
                },
            };
            SamplingScheme::with_provenance(
                standard_p,
                vec![alpha; m],
                alpha,
                true,
                Some(variant),
                seed,
            )
        }
        Variant::V3 => {
            let weights = random_weights(m, seed);
            SamplingScheme::with_provenance(standard_p, weights, 1.0, false, Some(variant), seed)
        }
        Variant::V4 => {
            let weights = random_weights(m, seed);
            let ratios: Vec<f64> = (0..m).map(|i| a.row_norm_sq(i) / weights[i]).collect();
            let z: f64 = ratios.iter().sum();
            let p: Vec<f64> = ratios.iter().map(|r| r / z).collect();
            let alpha = frob_sq / z;
            SamplingScheme::with_provenance(p, weights, alpha, true, Some(variant), seed)
        }
    }
}

fn random_weights(m: usize, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| rng.random::<f64>().max(WEIGHT_FLOOR))
        .collect()
}

/// True iff max_i |p_i w_i / ||a_i||^2 - alpha/||A||_F^2| <= tol * alpha/||A||_F^2.
pub fn verify_coupling(scheme: &SamplingScheme, a: &DenseMatrix, tol: f64) -> bool {
    if scheme.len() != a.rows() {
        return false;
    }
    let target = scheme.alpha() / a.frob_norm_sq();
    (0..a.rows()).all(|i| {
        let v = scheme.probabilities[i] * scheme.weights[i] / a.row_norm_sq(i);
        (v - target).abs() <= tol * target
    })
}

/// Draw eta row indices i.i.d. from the scheme's categorical distribution
/// via inverse CDF with binary search on the cumulative table. Consumes
/// exactly eta uniforms from the generator.
pub fn sample_batch<R: Rng + ?Sized>(
    scheme: &SamplingScheme,
    eta: usize,
    rng: &mut R,
) -> BatchDraw {
    let m = scheme.len();
    let indices = (0..eta)
        .map(|_| {
            let r = rng.random::<f64>();
            scheme.cumulative.partition_point(|&c| c <= r).min(m - 1)
        })
        .collect();
    BatchDraw { indices }
}

/// E[M_k] = P W D^-2, the m-by-m diagonal with entries p_i w_i/||a_i||^2.
pub fn expected_sampling_matrix(scheme: &SamplingScheme, a: &DenseMatrix) -> Result<DenseMatrix> {
    if scheme.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "expected_sampling_matrix",
            expected: a.rows(),
            got: scheme.len(),
        });
    }
    let m = a.rows();
    DenseMatrix::from_fn(m, m, |i, j| {
        if i == j {
            scheme.probabilities[i] * scheme.weights[i] / a.row_norm_sq(i)
        } else {
            0.0
        }
    })
}

/// E[(A^T M_k)^T (A^T M_k)] = (1/eta) P W^2 D^-2
///                          + (1 - 1/eta) P W D^-2 A A^T P W D^-2.
pub fn second_moment_matrix(
    scheme: &SamplingScheme,
    a: &DenseMatrix,
    eta: usize,
) -> Result<DenseMatrix> {
    if scheme.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "second_moment_matrix",
            expected: a.rows(),
            got: scheme.len(),
        });
    }
    if eta == 0 {
        return Err(Error::InvalidEta {
            eta,
            context: "second_moment_matrix",
        });
    }
    let m = a.rows();
    let inv_eta = 1.0 / eta as f64;
    let e1: Vec<f64> = (0..m)
        .map(|i| scheme.probabilities[i] * scheme.weights[i] / a.row_norm_sq(i))
        .collect();
    let gram = a.gram_aat();
    DenseMatrix::from_fn(m, m, |i, j| {
        let diag = if i == j {
            inv_eta * scheme.probabilities[i] * scheme.weights[i] * scheme.weights[i]
                / a.row_norm_sq(i)
        } else {
            0.0
        };
        diag + (1.0 - inv_eta) * e1[i] * gram.get(i, j) * e1[j]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn v1_couples_with_alpha_one() {
        let a = gaussian_matrix(6, 4, 10);
        let s = build_variant(&a, Variant::V1, 3, 0).unwrap();
        assert_eq!(s.alpha(), 1.0);
        assert!(s.coupled());
        assert!(verify_coupling(&s, &a, COUPLING_TOL));
    }

    #[test]
    fn v1_uniform_probabilities_for_equal_row_norms() {
        let a = DenseMatrix::from_rows(3, 2, vec![1.0, 1.0, -1.0, 1.0, 1.0, -1.0]).unwrap();
        let s = build_variant(&a, Variant::V1, 1, 0).unwrap();
        for p in s.probabilities() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn v2_is_coupled_and_overrelaxed() {
        let a = gaussian_matrix(8, 3, 11);
        let s = build_variant(&a, Variant::V2, 5, 0).unwrap();
        assert!(verify_coupling(&s, &a, COUPLING_TOL));
        assert!(s.alpha() > 1.0 && s.alpha() <= 5.0);
        for w in s.weights() {
            assert_eq!(*w, s.alpha());
        }
    }

    #[test]
    fn v3_is_not_coupled() {
        let a = gaussian_matrix(6, 4, 12);
        let s = build_variant(&a, Variant::V3, 2, 7).unwrap();
        assert!(!s.coupled());
        assert!(!verify_coupling(&s, &a, COUPLING_TOL));
        assert!(s.weights().iter().all(|w| *w >= WEIGHT_FLOOR && *w <= 1.0));
    }

    #[test]
    fn v4_couples_with_weighted_alpha() {
        let a = gaussian_matrix(6, 4, 13);
        let s = build_variant(&a, Variant::V4, 2, 21).unwrap();
        assert!(s.coupled());
        assert!(verify_coupling(&s, &a, COUPLING_TOL));
        let z: f64 = (0..6).map(|i| a.row_norm_sq(i) / s.weight(i)).sum();
        assert!((s.alpha() - a.frob_norm_sq() / z).abs() < 1e-12 * s.alpha());
    }

    #[test]
    fn coupling_broken_by_one_weight() {
        let a = gaussian_matrix(5, 3, 14);
        let s = build_variant(&a, Variant::V1, 1, 0).unwrap();
        let mut w = s.weights().to_vec();
        w[2] *= 1.5;
        let broken =
            SamplingScheme::new(s.probabilities().to_vec(), w, s.alpha(), true).unwrap();
        assert!(!verify_coupling(&broken, &a, COUPLING_TOL));
    }

    #[test]
    fn zero_row_rejected() {
        let a = DenseMatrix::from_rows(2, 2, vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            build_variant(&a, Variant::V1, 1, 0),
            Err(Error::ZeroRow(1))
        ));
    }

    #[test]
    fn point_mass_always_draws_that_row() {
        let p = vec![0.0, 0.0, 0.0, 1.0];
        let s = SamplingScheme::new(p, vec![1.0; 4], 1.0, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&s, 5, &mut rng);
        assert_eq!(b.indices(), &[3, 3, 3, 3, 3]);
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let a = gaussian_matrix(9, 3, 15);
        let s = build_variant(&a, Variant::V1, 4, 0).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .flat_map(|_| sample_batch(&s, 4, &mut rng).indices().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(123), draw(123));
        assert_ne!(draw(123), draw(124));
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let m = 6;
        let a = gaussian_matrix(m, 4, 16);
        let s = build_variant(&a, Variant::V1, 1, 0).unwrap();
        let n_draws = 100_000usize;
        let mut counts = vec![0usize; m];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..n_draws {
            counts[sample_batch(&s, 1, &mut rng).indices()[0]] += 1;
        }
        for i in 0..m {
            let p = s.probabilities()[i];
            let sigma = (p * (1.0 - p) * n_draws as f64).sqrt();
            let dev = (counts[i] as f64 - p * n_draws as f64).abs();
            assert!(dev <= 3.0 * sigma + 1e-9, "row {i}: dev {dev} > 3 sigma {sigma}");
        }
    }

    #[test]
    fn expected_sampling_matrix_v1_is_scaled_identity() {
        let a = gaussian_matrix(5, 3, 18);
        let s = build_variant(&a, Variant::V1, 2, 0).unwrap();
        let e = expected_sampling_matrix(&s, &a).unwrap();
        let want = 1.0 / a.frob_norm_sq();
        for i in 0..5 {
            for j in 0..5 {
                let target = if i == j { want } else { 0.0 };
                assert!((e.get(i, j) - target).abs() <= 1e-10 * want);
            }
        }
    }

    #[test]
    fn expected_sampling_matrix_single_row() {
        let a = DenseMatrix::from_rows(1, 2, vec![3.0, 4.0]).unwrap();
        let s = SamplingScheme::new(vec![1.0], vec![0.7], 1.0, false).unwrap();
        let e = expected_sampling_matrix(&s, &a).unwrap();
        assert!((e.get(0, 0) - 0.7 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn coupled_variants_have_scaled_identity_first_moment() {
        let a = gaussian_matrix(7, 4, 19);
        for (variant, seed) in [(Variant::V1, 0), (Variant::V2, 0), (Variant::V4, 5)] {
            let s = build_variant(&a, variant, 3, seed).unwrap();
            let e = expected_sampling_matrix(&s, &a).unwrap();
            let want = s.alpha() / a.frob_norm_sq();
            for i in 0..7 {
                assert!(
                    (e.get(i, i) - want).abs() <= 1e-10 * want,
                    "{variant}: diag {i}"
                );
            }
        }
    }

    #[test]
    fn second_moment_eta_one_is_pw2d2() {
        let a = gaussian_matrix(4, 3, 20);
        let s = build_variant(&a, Variant::V3, 1, 3).unwrap();
        let m2 = second_moment_matrix(&s, &a, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j {
                    s.probabilities()[i] * s.weight(i) * s.weight(i) / a.row_norm_sq(i)
                } else {
                    0.0
                };
                assert!((m2.get(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn second_moment_large_eta_limit() {
        let a = gaussian_matrix(4, 3, 22);
        let s = build_variant(&a, Variant::V1, 2, 0).unwrap();
        let m2 = second_moment_matrix(&s, &a, 1_000_000).unwrap();
        let e1 = expected_sampling_matrix(&s, &a).unwrap();
        let gram = a.gram_aat();
        let mut max_rel = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                let limit = e1.get(i, i) * gram.get(i, j) * e1.get(j, j);
                scale = scale.max(limit.abs());
                max_rel = max_rel.max((m2.get(i, j) - limit).abs());
            }
        }
        assert!(max_rel <= 1e-5 * scale, "max dev {max_rel}, scale {scale}");
    }

    #[test]
    fn second_moment_matches_exhaustive_enumeration() {
        // m = 3, eta = 2: all 9 ordered batches weighted by p_i p_j
        let a = gaussian_matrix(3, 2, 23);
        let s = build_variant(&a, Variant::V4, 2, 9).unwrap();
        let eta = 2usize;
        let m = 3usize;
        let mut first = vec![0.0; m * m];
        let mut second = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let prob = s.probabilities()[i] * s.probabilities()[j];
                // M = (1/eta)(w_i e_i e_i^T/||a_i||^2 + w_j e_j e_j^T/||a_j||^2)
                let mut mk = vec![0.0; m * m];
                mk[i * m + i] += s.weight(i) / a.row_norm_sq(i) / eta as f64;
                mk[j * m + j] += s.weight(j) / a.row_norm_sq(j) / eta as f64;
                for d in 0..m {
                    first[d * m + d] += prob * mk[d * m + d];
                }
                // M A A^T M with diagonal M
                let gram = a.gram_aat();
                for r in 0..m {
                    for c in 0..m {
                        second[r * m + c] +=
                            prob * mk[r * m + r] * gram.get(r, c) * mk[c * m + c];
                    }
                }
            }
        }
        let e1 = expected_sampling_matrix(&s, &a).unwrap();
        let m2 = second_moment_matrix(&s, &a, eta).unwrap();
        for r in 0..m {
            for c in 0..m {
                assert!((first[r * m + c] - e1.get(r, c)).abs() < 1e-14);
                assert!(
                    (second[r * m + c] - m2.get(r, c)).abs() < 1e-14,
                    "({r},{c}): {} vs {}",
                    second[r * m + c],
                    m2.get(r, c)
                );
            }
        }
    }
}

//! Step kernels and the iteration loop for RK, RSK, RSKA and the
//! linearized Bregman method.
//!
//! One RSKA iteration averages eta single-row Kaczmarz corrections
//!
//!   delta = (1/eta) sum_{i in tau} w_i (<a_i, x> - b_i)/||a_i||^2 a_i,
//!   x*_{k+1} = x*_k - delta,   x_{k+1} = S_lambda(x*_{k+1}),
//!
//! with the per-index terms reduced in ascending batch position, so a
//! trace depends only on (seed, problem) and never on scheduling. RSK is
//! the eta = 1 case, RK additionally drops the shrinkage (lambda = 0),
//! and linearized Bregman replaces the sampled average by the full
//! gradient step A^T(Ax - b)/||A||_2^2.

use crate::convex::{residual_norms, shrink, soft_shrinkage_into};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, spectral_norm, DenseMatrix};
use crate::problems::Problem;
use crate::sampling::{sample_batch, BatchDraw, SamplingScheme};
use crate::theory::{MAX_POWER_ITERS, SPECTRAL_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Rk,
    Rsk,
    Rska,
    LinBreg,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Rk => write!(f, "RK"),
            Method::Rsk => write!(f, "RSK"),
            Method::Rska => write!(f, "RSKA"),
            Method::LinBreg => write!(f, "LinBreg"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk" => Ok(Method::Rk),
            "rsk" => Ok(Method::Rsk),
            "rska" => Ok(Method::Rska),
            "linbreg" | "lin-breg" | "lb" => Ok(Method::LinBreg),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Primal iterate x, pre-shrinkage iterate x*, and the iteration count.
/// x = S_lambda(x*) holds after every step by construction; both start
/// at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub xstar: Vec<f64>,
    pub k: usize,
}

impl SolverState {
    pub fn zeros(n: usize) -> Self {
        SolverState {
            x: vec![0.0; n],
            xstar: vec![0.0; n],
            k: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    pub lambda: f64,
    pub eta: usize,
    pub max_iters: usize,
    /// Early-stop threshold on the relative residual, checked at recorded
    /// iterations; zero disables early stopping.
    pub residual_tol: f64,
    pub seed: u64,
    /// Row-selection scheme; unused by LinBreg.
    pub scheme: Option<SamplingScheme>,
    pub record_every: usize,
    /// Abort early once the relative residual exceeds this value
    /// (divergence guard for sweeps).
    pub stop_above: Option<f64>,
    /// Record wall-clock time. Off by default so experiment outputs are
    /// reproducible byte for byte.
    pub record_walltime: bool,
}

impl SolverConfig {
    pub fn new(method: Method, lambda: f64, eta: usize, max_iters: usize, seed: u64) -> Self {
        SolverConfig {
            method,
            lambda,
            eta,
            max_iters,
            residual_tol: 0.0,
            seed,
            scheme: None,
            record_every: 1,
            stop_above: None,
            record_walltime: false,
        }
    }

    pub fn with_scheme(mut self, scheme: SamplingScheme) -> Self {
        self.scheme = Some(scheme);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta == 0 {
            return Err(Error::InvalidEta {
                eta: self.eta,
                context: "solver config",
            });
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.residual_tol < 0.0 {
            return Err(Error::InvalidConfig("residual_tol must be >= 0".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.scheme.is_none() && self.method != Method::LinBreg {
            return Err(Error::InvalidConfig(format!(
                "method {} needs a sampling scheme",
                self.method
            )));
        }
        Ok(())
    }

    /// Rows touched per iteration: 1 for RK/RSK, eta for RSKA, m for
    /// linearized Bregman.
    pub fn rows_per_iter(&self, m: usize) -> u64 {
        match self.method {
            Method::Rk | Method::Rsk => 1,
            Method::Rska => self.eta as u64,
            Method::LinBreg => m as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub row_accesses: u64,
    pub rel_residual: f64,
    pub rel_error: Option<f64>,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub status: TerminalStatus,
}

impl RunTrace {
    /// First recorded iteration with relative residual <= tol.
    pub fn first_hit(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_residual <= tol)
            .map(|r| r.k)
    }

    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("a trace has at least the k=0 record")
    }

    pub fn max_rel_residual(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.rel_residual)
            .fold(0.0, f64::max)
    }

    /// Diverged if any recorded residual is non-finite or exceeds
    /// `factor` times the initial residual.
    pub fn diverged(&self, factor: f64) -> bool {
        let initial = self.records[0].rel_residual;
        self.records
            .iter()
            .any(|r| !r.rel_residual.is_finite() || r.rel_residual > factor * initial)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,row_accesses,rel_residual,rel_error,wall_ns\n");
        for r in &self.records {
            let err = r.rel_error.map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.k, r.row_accesses, r.rel_residual, err, r.wall_ns
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Sum of weighted row corrections over the batch, reduced in ascending
/// batch position, then scaled by 1/eta. With eta = 1 the scaling
/// multiplies by exactly 1.0, so single-index batches reproduce the RSK
/// arithmetic bit for bit.
fn accumulate_delta(
    delta: &mut [f64],
    a: &DenseMatrix,
    b: &[f64],
    x: &[f64],
    indices: &[usize],
    weight_of: impl Fn(usize) -> f64,
    inv_eta: f64,
) {
    delta.fill(0.0);
    for &i in indices {
        let coeff = weight_of(i) * (dot(a.row(i), x) - b[i]) / a.row_norm_sq(i);
        for (d, aij) in delta.iter_mut().zip(a.row(i)) {
            *d += coeff * aij;
        }
    }
    if inv_eta != 1.0 {
        for d in delta.iter_mut() {
            *d *= inv_eta;
        }
    }
}

fn check_dims(a: &DenseMatrix, b: &[f64], state: &SolverState) -> Result<()> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "solver rhs",
            expected: a.rows(),
            got: b.len(),
        });
    }
    if state.x.len() != a.cols() || state.xstar.len() != a.cols() {
        return Err(Error::DimensionMismatch {
            context: "solver state",
            expected: a.cols(),
            got: state.x.len(),
        });
    }
    Ok(())
}

/// One RSKA step over the given batch.
pub fn rska_step(
    state: &SolverState,
    a: &DenseMatrix,
    b: &[f64],
    batch: &BatchDraw,
    scheme: &SamplingScheme,
    lambda: f64,
) -> Result<SolverState> {
    check_dims(a, b, state)?;
    if let Some(&bad) = batch.indices().iter().find(|&&i| i >= a.rows()) {
        return Err(Error::InvalidConfig(format!(
            "batch index {bad} out of range for {} rows",
            a.rows()
        )));
    }
    let mut delta = vec![0.0; a.cols()];
    let inv_eta = 1.0 / batch.len() as f64;
    accumulate_delta(
        &mut delta,
        a,
        b,
        &state.x,
        batch.indices(),
        |i| scheme.weight(i),
        inv_eta,
    );
    let mut next = state.clone();
    advance(&mut next, &delta, lambda);
    Ok(next)
}

/// One relaxed sparse Kaczmarz step on a single row.
pub fn rsk_step(
    state: &SolverState,
    a: &DenseMatrix,
    b: &[f64],
    row: usize,
    w: f64,
    lambda: f64,
) -> Result<SolverState> {
    check_dims(a, b, state)?;
    if row >= a.rows() {
        return Err(Error::InvalidConfig(format!(
            "row {row} out of range for {} rows",
            a.rows()
        )));
    }
    let mut delta = vec![0.0; a.cols()];
    accumulate_delta(&mut delta, a, b, &state.x, &[row], |_| w, 1.0);
    let mut next = state.clone();
    advance(&mut next, &delta, lambda);
    Ok(next)
}

/// One relaxed Kaczmarz step (no shrinkage); x* tracks x.
pub fn rk_step(
    state: &SolverState,
    a: &DenseMatrix,
    b: &[f64],
    row: usize,
    w: f64,
) -> Result<SolverState> {
    let mut next = rsk_step(state, a, b, row, w, 0.0)?;
    next.x = next.xstar.clone();
    Ok(next)
}

/// One linearized Bregman step: full gradient scaled by 1/||A||_2^2.
pub fn linearized_bregman_step(
    state: &SolverState,
    a: &DenseMatrix,
    b: &[f64],
    lambda: f64,
    spec_norm_sq: f64,
) -> Result<SolverState> {
    check_dims(a, b, state)?;
    let residual = a.matvec(&state.x)?;
    let mut scaled = vec![0.0; a.rows()];
    for ((s, r), bi) in scaled.iter_mut().zip(&residual).zip(b) {
        *s = (r - bi) / spec_norm_sq;
    }
    let delta = a.matvec_transpose(&scaled)?;
    let mut next = state.clone();
    advance(&mut next, &delta, lambda);
    Ok(next)
}

fn advance(state: &mut SolverState, delta: &[f64], lambda: f64) {
    for (xs, d) in state.xstar.iter_mut().zip(delta) {
        *xs -= d;
    }
    soft_shrinkage_into(&state.xstar, lambda, &mut state.x);
    state.k += 1;
    debug_assert!(state
        .x
        .iter()
        .zip(&state.xstar)
        .all(|(&x, &xs)| x.to_bits() == shrink(xs, lambda).to_bits()));
}

/// Run a configured method on a problem. Records the relative residual
/// (and relative error when the ground truth is known) at iteration 0,
/// every `record_every` iterations, and at the final iteration. The
/// residual is recomputed exactly at every recorded iteration. Given
/// (seed, problem) the trace is bit-reproducible regardless of thread
/// count.
pub fn run(config: &SolverConfig, problem: &Problem) -> Result<RunTrace> {
    config.validate()?;
    problem.a.require_nonzero_rows()?;
    let a = &problem.a;
    let b = problem.rhs();
    if norm2(b) == 0.0 {
        return Err(Error::ZeroRhs);
    }
    let xhat = problem.xhat.as_deref();
    let xhat_norm = xhat.map(|x| {
        let n = norm2(x);
        if n == 0.0 {
            1.0
        } else {
            n
        }
    });

    let scheme = config.scheme.as_ref();
    let eta = match config.method {
        Method::Rk | Method::Rsk => 1,
        Method::Rska => config.eta,
        Method::LinBreg => 0,
    };
    let lambda = match config.method {
        Method::Rk => 0.0,
        _ => config.lambda,
    };
    let spec_norm_sq = if config.method == Method::LinBreg {
        let s = spectral_norm(a, SPECTRAL_TOL, MAX_POWER_ITERS)?;
        s * s
    } else {
        0.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = SolverState::zeros(a.cols());
    let mut delta = vec![0.0; a.cols()];
    let rows_per_iter = config.rows_per_iter(a.rows());
    let inv_eta = if eta > 0 { 1.0 / eta as f64 } else { 0.0 };

    let start = Instant::now();
    let mut records = Vec::with_capacity(config.max_iters / config.record_every + 2);
    let mut status = TerminalStatus::MaxIters;

    let record =
        |records: &mut Vec<TraceRecord>, state: &SolverState, accesses: u64| -> Result<f64> {
            let (_, rel) = residual_norms(a, &state.x, b)?;
            let rel_error = match (xhat, xhat_norm) {
                (Some(xh), Some(nh)) => {
                    let d = state
                        .x
                        .iter()
                        .zip(xh)
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum::<f64>()
                        .sqrt();
                    Some(d / nh)
                }
                _ => None,
            };
            records.push(TraceRecord {
                k: state.k,
                row_accesses: accesses,
                rel_residual: rel,
                rel_error,
                wall_ns: if config.record_walltime {
                    start.elapsed().as_nanos() as u64
                } else {
                    0
                },
            });
            Ok(rel)
        };

    record(&mut records, &state, 0)?;
    let mut accesses = 0u64;
    for k in 1..=config.max_iters {
        match config.method {
            Method::Rk | Method::Rsk | Method::Rska => {
                let scheme = scheme.expect("validated above");
                let batch = sample_batch(scheme, eta, &mut rng);
                accumulate_delta(
                    &mut delta,
                    a,
                    b,
                    &state.x,
                    batch.indices(),
                    |i| scheme.weight(i),
                    inv_eta,
                );
                advance(&mut state, &delta, lambda);
                if config.method == Method::Rk {
                    state.x.copy_from_slice(&state.xstar);
                }
            }
            Method::LinBreg => {
                let next = linearized_bregman_step(&state, a, b, lambda, spec_norm_sq)?;
                state = next;
            }
        }
        accesses += rows_per_iter;
        if k % config.record_every == 0 || k == config.max_iters {
            let rel = record(&mut records, &state, accesses)?;
            if config.residual_tol > 0.0 && rel <= config.residual_tol {
                status = TerminalStatus::Converged;
                break;
            }
            if let Some(cap) = config.stop_above {
                if !rel.is_finite() || rel > cap {
                    break;
                }
            }
        }
    }
    Ok(RunTrace { records, status })
}

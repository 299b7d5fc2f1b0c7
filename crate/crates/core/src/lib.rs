//! Randomized sparse Kaczmarz with averaging (RSKA) and its special
//! cases, with the convergence certificates that predict their behavior.
//!
//! The iteration approximates the sparse solution of a consistent linear
//! system A x = b through the regularized basis pursuit problem
//!
//!   min lambda*||x||_1 + 1/2*||x||_2^2  s.t.  A x = b.
//!
//! Each step draws a batch of rows with replacement, averages their
//! weighted Kaczmarz corrections on the dual iterate x*, and soft-shrinks
//! back to the primal. Batch size 1 with unit weights is the classic
//! sparse Kaczmarz method; dropping the shrinkage gives randomized
//! Kaczmarz; the full-gradient limit is the linearized Bregman method.
//!
//! Modules:
//! - [`matrix`], [`convex`]: dense kernels, shrinkage, Bregman distances
//! - [`sampling`]: probabilities, weights, coupling, batch draws, moments
//! - [`solvers`]: step kernels and the deterministic run loop
//! - [`theory`]: rate certificates (alpha*, L, q, gamma, noisy horizon)
//! - [`problems`]: synthetic instances, noise, file formats
//! - [`harness`]: multi-trial experiments, sweeps, CSV outputs
//! - [`verify`]: oracle checks behind the `verify` CLI command

pub mod convex;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod problems;
pub mod sampling;
pub mod solvers;
pub mod testutil;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
pub use harness::{run_experiment, sweep, ExperimentSpec, MethodSpec, SweepSpec};
pub use matrix::DenseMatrix;
pub use problems::{add_sphere_noise, generate_gaussian, load_problem, save_problem, Problem};
pub use sampling::{build_variant, SamplingScheme, Variant};
pub use solvers::{run, Method, RunTrace, SolverConfig, SolverState};
pub use theory::{certify, RateCertificate};

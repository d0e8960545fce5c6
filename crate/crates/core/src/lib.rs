//! Local convergence analysis of factorized gradient descent for symmetric
//! low-rank matrix completion.
//!
//! Matrices are vectorized column-major throughout; see [`linops::VecIndexMap`].

pub mod eigen;
pub mod error;
pub mod gd;
pub mod linalg;
pub mod linops;
pub mod problem;
pub mod rate;
pub mod report;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use gd::{gd_step, gradient, objective, run_gd, ConvergenceTrace, GdConfig, GdRun, StepSize};
pub use linalg::truncated_eig;
pub use problem::{
    feasibility_check, generate_instance, init_perturbed, init_spectral,
    sample_bernoulli_symmetric, GroundTruth, ProblemInstance, SamplingMask,
};
pub use rate::{contraction_check, RateReport};
pub use verify::{run_suite, Suite, VerificationReport};

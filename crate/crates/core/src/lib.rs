//! Monte Carlo solution of Dirichlet boundary value problems for
//! divergence-form semilinear elliptic operators
//!
//! ```text
//! A u = 1/2 div(a grad u) + b . grad u - "div(bhat u)" + q u = -f(x, u, grad u)   in D,
//!   u = phi                                                                        on dD,
//! ```
//!
//! built from four cooperating pieces:
//!
//! * [`sde`] — forward simulation of the diffusion generated by
//!   `L1 = 1/2 div(a grad .) + b . grad`, including the divergence-form
//!   drift correction, first-exit detection and an optional Brownian-bridge
//!   sub-step exit test;
//! * [`feynman_kac`] — averaging of boundary/running path functionals for
//!   the linear problem, with exponential-gauge diagnostics;
//! * [`bsde`] — a Picard iteration on grid functions that realizes the
//!   semilinear solve (the running driver is frozen at the previous iterate,
//!   each sweep is a linear Feynman–Kac solve);
//! * [`htransform`] — removal of the distributional drift `div(bhat .)` by
//!   the gauge `h = exp(v)`, where `v` solves `div(a grad v) = -2 div(bhat)`
//!   on an enclosing box, plus the inverse transform `u = exp(-v) * u_hat`.
//!
//! Everything stochastic is cross-checked against [`oracle`], a deterministic
//! finite-difference solver for the same operator. [`fixtures`] collects the
//! closed-form and manufactured test problems shared by the test suites.
//!
//! Reproducibility contract: every estimator derives one RNG stream per path
//! from a root seed and a counter, and reduces in fixed path order, so results
//! are bit-identical for any worker count.

pub mod bsde;
pub mod cli;
pub mod config;
pub mod domain;
pub mod feynman_kac;
pub mod fixtures;
pub mod grid;
pub mod htransform;
pub mod linalg;
pub mod manifest;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod sde;

pub use domain::Domain;
pub use grid::GridFunction;
pub use problem::{Driver, EllipticProblem, MatrixField, ScalarField, SolveMode, VectorField};
pub use sde::{PathSample, SimConfig};

/// Umbrella error for solver pipelines and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Problem(#[from] problem::ProblemError),
    #[error(transparent)]
    Domain(#[from] domain::DomainError),
    #[error(transparent)]
    Sde(#[from] sde::SdeError),
    #[error(transparent)]
    Mc(#[from] feynman_kac::McError),
    #[error(transparent)]
    Bsde(#[from] bsde::BsdeError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Transform(#[from] htransform::TransformError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

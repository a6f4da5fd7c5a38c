//! Finite-horizon LQG control with one quadratic (energy) inequality
//! constraint.
//!
//! The constraint is priced by a scalar multiplier `λ`. For fixed `λ` the
//! optimal linear feedback comes from a Riccati recursion on the weights
//! `Q + λQ̃`, `R + λR̃`; the multiplier itself is the root of the constraint
//! gap `f(λ) = C(λ) − γ`, located by bisection.
//!
//! - [`problem`]: problem instances, file format, validation
//! - [`riccati`]: backward pass and gains
//! - [`moments`]: second-moment propagation and costs
//! - [`dual`]: `f(λ)`, bisection, sweeps, KKT residuals
//! - [`montecarlo`]: sampled rollouts
//! - [`cli`]: command-line driver

// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod dual;
pub mod error;
pub mod linalg;
pub mod moments;
pub mod montecarlo;
pub mod problem;
pub mod riccati;

pub use dual::{
    f_eval, kkt_residuals, lambda_sweep, solve, Evaluation, KktReport, Scenario, SolveOptions,
    SolveResult, SweepTable,
};
pub use error::{Error, Result};
pub use moments::{costs, moment_forward, CostPair, MomentTrajectory};
pub use montecarlo::{simulate, trajectory, EmpiricalStats, TrajectoryRecord};
pub use problem::{load_problem, validate, LqgProblem, ValidationReport, Weights};
pub use riccati::{riccati_backward, riccati_residual, RiccatiSolution};

//! Function-based uncertainty quantification.
//!
//! This crate models an unknown function as a random basis expansion,
//! samples data-consistent scenarios from it, and certifies high-probability
//! uncertainty tubes around the unknown function with the classic and
//! wait-and-judge scenario approaches. On top of the tubes it bounds scalar
//! functionals (Lipschitz constant, supremum/infimum, integral, RKHS norm)
//! and runs a safe Bayesian-optimization loop against synthetic plants and a
//! simulated Furuta pendulum.
//!
//! Start with the runnable programs in `examples/`; each one exercises a
//! major capability end to end. The `scenario-tubes` binary exposes the same
//! machinery as subcommands for scripted runs.

pub mod basis;
pub mod certificates;
pub mod cli;
pub mod config;
pub mod convolve;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod io;
pub mod model;
pub mod plants;
pub mod rng;
pub mod safe_bo;
pub mod tube;

pub use basis::{eval_basis, vandermonde, BasisFamily, DesignMatrix, KernelSpec};
pub use certificates::{
    binomial_tail, classic_sample_size, scalar_sample_size, wj_sample_size_for, wj_solve_tau,
    Certificate, ConfidenceSchedule, TrialCounting, TubeMethod,
};
pub use error::{Error, Result};
pub use grid::{build_grid, DomainGrid};
pub use model::{
    draw_scenarios, project_coeffs, sample_prior_coeffs, CoeffDistribution, Dataset,
    FunctionModel, ModelEvaluators, NoiseDistribution, ScenarioBatch, ScenarioSampler,
};
pub use rng::{Stream, StreamTag};

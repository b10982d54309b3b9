//! Estimation of spatio-temporal arrival intensities when a fraction of
//! arrivals carry no location.
//!
//! Arrivals of type `c` in zone `i` during period `t` follow a Poisson process
//! with intensity `λ_{c,i,t}`; each arrival independently loses its location
//! with probability `p_{c,t}`. The crate provides closed-form estimators,
//! asymptotic uncertainty, penalized, covariate and population-weighted
//! estimators, file formats, and a simulator.

pub mod analytic;
pub mod covariate;
pub mod error;
pub mod io;
mod linalg;
pub mod model;
pub mod population;
pub mod regularized;
pub mod report;
pub mod simulate;
pub mod solver;
pub mod uncertainty;

pub use analytic::{
    estimate_lambda, estimate_lambda_uncorrected, estimate_p_global, estimate_p_per_ct,
    estimate_total, log_likelihood, BlockProbabilities, MissingProbability,
};
pub use error::{Error, Result};
pub use model::{BlockStatus, CountData, DayAxis, IntensityField, ProblemShape};
pub use solver::{projected_gradient, BoxBounds, Objective, Solution, SolverConfig, Termination};

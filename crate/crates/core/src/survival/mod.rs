//! Kaplan–Meier curves, restricted mean survival time, jackknife
//! pseudo-observations and the weighted Cox proportional-hazards solver.

mod cox;
mod km;
mod pseudo;

pub use cox::{cox_fit, cox_fit_full, cox_partial_likelihood, CoxFit, CoxOptions, HREstimate};
pub use km::{km_fit, rmst, SurvivalCurve};
pub use pseudo::{pseudo_rmst, PseudoOutcome, PseudoScope};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("pseudo-observation group `{group}` has {n} patients, need at least 2")]
    GroupTooSmall { group: String, n: usize },
    #[error("no weighted events")]
    NoEvents,
    #[error("design matrix is singular ({0})")]
    Singular(String),
    #[error(
        "Cox fit did not converge after {iterations} iterations (max |gradient| {gradient:e})"
    )]
    NotConverged { iterations: usize, gradient: f64 },
}

/// Default restricted-mean horizon, in caller time units (5 years in months).
pub const DEFAULT_TAU: f64 = 60.0;

//! Treatment-effect estimation from observational survival data with a
//! latent prognostic factor.
//!
//! The workflow has three steps:
//!
//! 1. [`latent`]: infer a per-patient latent factor from pseudo-RMST
//!    discrepancies between each patient and same-arm neighbors with the
//!    opposite survival trajectory.
//! 2. [`balancing`]: balance the arms on observed covariates plus the latent
//!    factor (prognostic matching, entropy balancing or IPTW).
//! 3. [`survival`]: estimate the treatment hazard ratio with a weighted Cox
//!    model on treatment and observed covariates only.
//!
//! [`stats`] holds the validation tests, [`synthetic`] a generator with a
//! known hidden confounder and [`pipeline`] the grid runner behind the
//! `survlatent` binary.

pub mod balancing;
pub mod data;
pub mod error;
pub mod latent;
pub mod logistic;
pub mod numeric;
pub mod pipeline;
pub mod prognostic;
pub mod stats;
pub mod survival;
pub mod synthetic;

pub use error::Error;

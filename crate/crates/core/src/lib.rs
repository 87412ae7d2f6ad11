//! Mode-matched inverse-gamma priors for two-level random-intercept models,
//! with ML and Gibbs estimators and a Monte Carlo study harness.

pub mod distributions;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod model;
pub mod parallel;
pub mod priorforge;
pub mod report;
mod special;

pub use error::{Error, Result};

//! Overparameterized linear regression lab: min-norm single-task,
//! multi-task and continual learners, their exact expected risks under
//! isotropic Gaussian features, and Monte-Carlo machinery to check one
//! against the other.
//!
//! Layers, bottom up: [`domain`] types, [`solver`] (min-norm least squares),
//! [`taskgen`] (random tasks and data), [`learners`], [`theory`] (closed
//! forms), [`montecarlo`], and the orchestration in [`sweep`],
//! [`validate`] and [`presets`]. [`panels`] selects plot series from sweep
//! output.

pub mod config;
pub mod domain;
pub mod error;
pub mod learners;
pub mod montecarlo;
pub mod panels;
pub mod presets;
pub mod solver;
pub mod sweep;
pub mod taskgen;
pub mod theory;
pub mod validate;

pub use config::ExperimentConfig;
pub use domain::*;
pub use error::{Error, Result};

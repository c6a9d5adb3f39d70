//! Streaming least-squares regression with projected SGD and weighted iterate averaging.
//!
//! The crate provides:
//!
//! - [`types`]: vectors, samples, constraint sets, and the regression problem
//!   with exact excess-risk evaluation,
//! - [`schedule`]: the `gamma/(gamma+k)` step-size family and the recursive
//!   averaging-weight normalizer,
//! - [`optimizer`]: single-sample gradients, Euclidean projection, and the
//!   streaming methods (PSGD, PSGD-A, PSGD-WA) including a scalar
//!   unconstrained fast path,
//! - [`erm`]: a streaming empirical-risk-minimizer baseline over
//!   normal-equation sufficient statistics,
//! - [`data`]: seeded synthetic Gaussian streams and CSV dataset ingestion,
//! - [`bounds`]: closed-form finite-sample error bounds and the numeric
//!   checks backing them,
//! - [`harness`]: a deterministic Monte-Carlo experiment runner with CSV
//!   emission.

pub mod bounds;
pub mod data;
pub mod erm;
pub mod error;
pub mod harness;
pub mod optimizer;
pub mod schedule;
pub mod types;

pub use error::{Error, Result};
pub use optimizer::{Method, OptimizerState};
pub use schedule::{AverageWeights, StepSchedule};
pub use types::{ConstraintSet, RegressionProblem, Sample, Vector};

//! Analysis of irregularly observed longitudinal data using physician-recommended
//! visit intervals.
//!
//! The pipeline classifies each inter-visit gap against the interval the physician
//! recommended at the previous visit, fits category-specific exponential visit
//! intensity models, weights a marginal outcome regression by the inverse of the
//! visit intensity (valid under assessment at random), and then re-weights under an
//! exponential-tilting model of assessment not at random over a grid of sensitivity
//! parameters.
//!
//! Module map:
//! - [`dataset`]: visit rows, CSV ingestion and derived forward differences
//! - [`windows`]: visit categories and time-at-risk decomposition
//! - [`numerics`]: splines, weighted least squares, exponential survival MLE,
//!   quantile regression, normal CDF, trapezoid rule
//! - [`intensity`]: visit intensity models and inverse-intensity weights
//! - [`tilt`]: tilting function, normalizer regressions and tilted weights
//! - [`outcome`]: weighted marginal outcome model, trajectories and AUC
//! - [`sensitivity`]: sensitivity grid and elicitation curves
//! - [`diagnostics`]: agreement between observed and recommended intervals
//! - [`simulator`]: synthetic cohorts with known truth

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod diagnostics;
mod error;
pub mod intensity;
pub mod numerics;
pub mod outcome;
pub mod parallel;
pub mod sensitivity;
pub mod simulator;
pub mod tilt;
pub mod windows;

pub use error::{Error, Result};

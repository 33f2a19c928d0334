//! Velocity-adaptive SPS selection windows for fair V2I access.
//!
//! Vehicles crossing an RSU's coverage at different speeds get different
//! amounts of data through. This crate models that analytically (`scenario`,
//! `channel`, `analytics`), checks the collision model against a Monte Carlo
//! SPS simulator (`sim`), and searches per-lane selection windows that even
//! out the fairness index with NSGA-II (`nsga2`, `metrics`). The
//! `experiment` module wires these into reproducible CSV-producing runs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod channel;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod nsga2;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};

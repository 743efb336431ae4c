//! Observation-driven Poisson-gamma state-space models for panel count data.
//!
//! The latent risk factor of each series follows a gamma filtering law that
//! is updated in closed form after every observation, so the one-step
//! predictive law of a count is negative binomial and the likelihood of a
//! whole panel is available without simulation. The modules cover:
//!
//! * [`dist`]: densities and samplers,
//! * [`filter`]: the update/predict recursion and its trace,
//! * [`regimes`]: the thinning schedules that select a variance regime,
//! * [`simulate`]: path simulation and the Monte Carlo study harness,
//! * [`regression`]: the negative-binomial GLM giving per-period intensities,
//! * [`estimate`]: panel likelihood, dynamics fitting and model comparison,
//! * [`metrics`]: holdout scoring,
//! * [`io`]: panel files, configs, model files and synthetic panels.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod estimate;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod regimes;
pub mod regression;
pub mod simulate;

pub use error::{Error, Result};

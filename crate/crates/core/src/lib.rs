//! Probabilistic forecasting with natural-gradient boosted trees.
//!
//! The crate covers the full modelling path for quarter-hourly power
//! forecasting: feature construction ([`dataset`]), parametric predictive
//! distributions and scoring rules ([`dists`]), regression-tree base
//! learners ([`tree`]), the boosting loop ([`ngboost`]), exact SHAP
//! attributions for both distribution heads ([`explain`]), comparison
//! baselines ([`baselines`]) and evaluation metrics ([`metrics`]).

pub mod baselines;
pub mod dataset;
pub mod dists;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod ngboost;
pub mod optim;
pub mod tree;

pub use error::{Error, Result};

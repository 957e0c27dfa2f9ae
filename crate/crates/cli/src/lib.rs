//! Command-line pipeline around the `solarprob` core: synthetic benchmark
//! data, training, day-ahead forecasting, evaluation, explanations, grid
//! search, feature pruning and the benchmark harness.

pub mod bench;
pub mod commands;
pub mod config;
pub mod forecast;
pub mod grid;
pub mod pipeline;
pub mod prune;
pub mod report;
pub mod synthetic;

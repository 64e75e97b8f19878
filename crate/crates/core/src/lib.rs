//! Path extrapolation on graphs: a neural encoder turns an observed trajectory
//! into per-edge transition weights (a latent graph), and a non-backtracking
//! walk on that latent graph scores, samples and extrapolates path suffixes.

pub mod graph;
pub mod metrics;
pub mod neural;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod nbwalk;
pub mod training;

//! Simulation core for adaptive 3D informative path planning.
//!
//! A UAV carrying a downward-facing camera flies over a gridded field and
//! fuses noisy, altitude-dependent measurements into a Gaussian-process
//! belief. The crate provides the pieces needed to pose that as a
//! sequential decision problem:
//!
//! - [`groundtruth`]: hidden occupancy fields, regions of interest, RMSE.
//! - [`belief`]: GP prior, batch GP conditioning and the sequential
//!   Kalman-style fusion used online.
//! - [`sensor`]: noise-vs-altitude curve, square footprint, measurement
//!   synthesis.
//! - [`roadmap`]: multi-altitude decision graph, Laplacian positional
//!   encodings and the augmented-graph observation.
//! - [`simenv`]: the episode (budget accounting, in-flight measurements,
//!   reward).
//! - [`baselines`]: random, coverage and MCTS planners.

pub mod baselines;
pub mod belief;
mod error;
pub mod grid;
pub mod groundtruth;
pub mod roadmap;
pub mod sensor;
pub mod simenv;

pub use error::{IppError, Result};
pub use grid::{GridSpec, Position};

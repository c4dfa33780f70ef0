//! Learning side of the planner: a small reverse-mode autodiff engine, the
//! attention policy built on it, and a PPO trainer with parallel rollouts.

pub mod diffmath;
mod error;
pub mod policynet;
pub mod trainer;

pub use error::{LearnError, Result};

//! Adversarial traffic-scenario generation: a nested intention search over a
//! convex jerk-sequence problem, goal-conditioned trajectory completion,
//! closed-loop rollout and evaluation metrics.

pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod intention;
pub mod kinematics;
pub mod metrics;
pub mod planner;
pub mod prior;
pub mod qp;
pub mod render;
pub mod scenario;
pub mod sim;
pub mod suite;

pub use error::{Error, Result};

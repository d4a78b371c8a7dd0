//! Boundary control of the ARZ freeway traffic model.
//!
//! The crate bundles a nonlinear Lax-Wendroff simulator, Lyapunov-based boundary
//! controllers (setpoint, backstepping, P, PI), a PPO actor-critic trainer that learns
//! boundary policies from the simulator, traffic performance metrics, and the
//! experiment harness behind the `arzctl` binary.

pub mod cli;
pub mod control;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rl;
pub mod solver;

pub use error::{ArzError, Result};

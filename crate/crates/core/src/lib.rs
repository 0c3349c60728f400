//! Simulation and control toolkit for autonomous mobility-on-demand fleets.
//!
//! The control loop at every time step has three stages: passengers are
//! matched to idle vehicles by a profit-maximizing assignment, a policy picks
//! a desired distribution of the remaining idle vehicles, and a min-cost
//! rebalancing problem turns that distribution into vehicle movements.
//!
//! Modules:
//! - [`scenario`]: city tasks, synthetic task generation, demand sampling, disturbances.
//! - [`flowopt`]: network simplex and the matching / rebalancing / MPC problems built on it.
//! - [`env`]: the rebalancing MDP.
//! - [`neural`]: tape-based reverse-mode autodiff, GRU, Dirichlet head, Adam.
//! - [`agent`]: recurrent graph actor-critic, A2C, meta-training and baselines.

pub mod agent;
pub mod env;
pub mod error;
pub mod flowopt;
pub mod neural;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
pub use scenario::City;

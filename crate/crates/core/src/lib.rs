//! Stigmergy-enhanced federated collective intelligence on grids.
//!
//! * [`grid`]: cell geometry, target masks, exclusive occupancy, similarity.
//! * [`pheromone`]: the digital pheromone medium.
//! * [`seal`]: the stigmergic cooperation loop.
//! * [`federated`]: federated semi-gradient TD learning.
//! * [`baselines`]: IQL, hysteretic and lenient tabular learners.
//! * [`auit`]: the anytime universal intelligence test harness.
//! * [`view`]: the local view shared by learners.
//! * [`experiments`]: config-driven experiment recipes behind the `seal` CLI.

pub mod auit;
pub mod baselines;
pub mod config;
pub mod experiments;
pub mod federated;
pub mod grid;
pub mod pheromone;
pub mod seal;
pub mod view;

//! Event-triggered competency self-assessment for a gridworld delivery agent.
//!
//! The agent predicts per-timestep distributions of what its sensor will see
//! by rolling out a world model, compares live observations against those
//! predictions with a discrete surprise index, and re-runs its outcome
//! assessment only when an observation is surprising.

pub mod assessment;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gridworld;
pub mod policy;
pub mod rollout;
pub mod seeding;

pub use error::{Error, Result};

//! Capability-parameterized cooperative multi-agent MDPs: exact solvers,
//! generalization and transfer bounds, gridworld environments, tabular
//! learning, and an experiment harness.

pub mod error;
pub mod bounds;
pub mod dynamics;
pub mod envs;
pub mod harness;
pub mod learning;
pub mod mdp;
pub mod seeding;

pub use error::{Error, Result};

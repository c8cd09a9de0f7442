//! Gridworld environments.

pub mod fruit_forage;
pub mod predator_prey;
pub mod suites;

pub use fruit_forage::{
    reference_team, build_fruit_forage, fruit_forage_environment, ForageLayout, ForageState,
    FruitForageConfig, FruitForageSim, TreeStatus, FORAGE_ACTIONS, T_X, T_Y, T_Z,
};
pub use predator_prey::{
    build_predator_prey, ObservationLayout, PredatorPrey, PredatorPreyConfig, StepOutcome,
    PP_ACTIONS,
};
pub use suites::{pp_task_suites, PPTask, TaskSuite};

use crate::error::Result;

/// Steppable cooperative environment with per-agent integer observation keys.
pub trait MultiAgentEnv {
    fn num_agents(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self) -> Vec<u128>;
    fn available(&self, agent: usize) -> Vec<bool>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;
}

//! Grid micro-battle: learning allies against scripted enemies, with the
//! observation split into an own part, an ally group and an enemy group, and
//! the action space split into fixed moves and one attack per enemy.

mod battle;
mod config;
mod obs;
pub mod scripted;
mod shuffle;
mod trajectory;

pub use battle::{
    move_offset, BattleEnv, BattleState, EntityState, Team, EAST, ENTITY_FEATURES, NOOP, NORTH,
    N_MOVE_ACTIONS, OWN_FEATURES, SOUTH, STOP, WEST,
};
pub use config::{BattleConfig, SPAWN_COLUMNS};
pub use obs::{invert_permutation, random_permutation, EntityGroup, ObsLayout, ObservationSet};
pub use shuffle::ShuffleWrapper;
pub use trajectory::{TrajectoryWriter, TRAJECTORY_HEADER};

use crate::error::Result;

/// Result of one joint step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub won: bool,
    /// Terminal because the step limit was reached with both teams alive.
    pub timed_out: bool,
}

/// Cooperative multi-agent environment with entity-structured observations.
///
/// The global state is a sequence of per-unit blocks of `layout().entity`
/// values, all allies first (agent order) then all enemies.
pub trait MultiAgentEnv {
    fn reset(&mut self, seed: u64) -> Result<()>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;
    fn observations(&self) -> Vec<ObservationSet>;
    fn avail_actions(&self) -> Vec<Vec<bool>>;
    fn state(&self) -> Vec<f64>;
    fn layout(&self) -> ObsLayout;
    fn n_agents(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn episode_limit(&self) -> usize;
}

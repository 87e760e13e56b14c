//! Value-decomposition Q-learning: mixers, TD(λ) targets, exploration,
//! episode replay, experience augmentation, the learner, rollouts and
//! checkpoints.

mod augment;
mod checkpoint;
mod config;
mod explore;
mod learner;
mod mixer;
mod replay;
mod rollout;
mod targets;

pub use augment::{augment_episode, augment_experience};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use explore::{epsilon_greedy_select, masked_argmax, EpsilonSchedule, UNAVAILABLE_Q};
pub use learner::{greedy_actions, Learner};
pub use mixer::{vdn_mix, Mixer, MixerKind, QmixMixer};
pub use replay::{Episode, ReplayBuffer, Transition};
pub use rollout::{collect_round, evaluate, greedy_policy, Runner};
pub use targets::td_lambda_targets;

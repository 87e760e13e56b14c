//! Agent-permutation-invariant Q-networks for cooperative multi-agent
//! reinforcement learning.
//!
//! Two architectures make an agent's Q-function invariant to the order of
//! homogeneous entities in its observation (and equivariant for actions that
//! target a specific entity):
//!
//! * [`dpn`] learns a permutation matrix that sorts each entity group into a
//!   canonical order before any downstream network, and un-permutes
//!   entity-targeted outputs afterwards.
//! * [`hpn`] generates a separate input-embedding weight matrix for every
//!   entity with a hypernetwork, merges the embeddings with a symmetric sum,
//!   and generates per-entity output weights for entity-targeted actions.
//!
//! Both plug into VDN/QMIX learners ([`marl`]) trained on a deterministic
//! grid battle ([`env`]).

pub mod agent;
pub mod autodiff;
pub mod baselines;
pub mod dpn;
pub mod env;
pub mod error;
pub mod experiment;
pub mod gumbel;
pub mod hpn;
pub mod marl;
pub mod nn;

pub use error::{Error, Result};

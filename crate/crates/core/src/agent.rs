//! Shared plumbing for agent Q-networks: batched observations, the network
//! trait and the closed set of architectures.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::baselines::{ConcatAgentNet, DeepSetAgentNet, HpnSetAgentNet, Pooling};
use crate::dpn::DpnAgentNet;
use crate::env::{ObsLayout, ObservationSet};
use crate::error::{Error, Result};
use crate::gumbel::Noise;
use crate::hpn::HpnAgentNet;
use crate::nn::Module;

/// `N` observations stacked row-wise, one row per (sample, agent).
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    pub layout: ObsLayout,
    pub n: usize,
    /// (N, own)
    pub own: Vec<f64>,
    /// (N, ally_rows, entity)
    pub allies: Vec<f64>,
    /// (N, enemy_rows, entity)
    pub enemies: Vec<f64>,
}

impl ObsBatch {
    pub fn new(layout: ObsLayout) -> Self {
        ObsBatch {
            layout,
            n: 0,
            own: Vec::new(),
            allies: Vec::new(),
            enemies: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: &ObservationSet) -> Result<()> {
        if !obs.conforms_to(&self.layout) {
            return Err(Error::Size(format!(
                "observation with {} ally and {} enemy rows does not match layout {:?}",
                obs.allies.rows(),
                obs.enemies.rows(),
                self.layout
            )));
        }
        self.own.extend_from_slice(&obs.own);
        self.allies.extend_from_slice(obs.allies.data());
        self.enemies.extend_from_slice(obs.enemies.data());
        self.n += 1;
        Ok(())
    }

    pub fn from_sets(layout: ObsLayout, sets: &[ObservationSet]) -> Result<Self> {
        let mut batch = ObsBatch::new(layout);
        for s in sets {
            batch.push(s)?;
        }
        Ok(batch)
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Empty("observation batch"));
        }
        Ok(())
    }

    pub fn own_var(&self, tape: &mut Tape) -> Result<Var> {
        self.ensure_nonempty()?;
        tape.constant(vec![self.n, self.layout.own], self.own.clone())
    }

    pub fn allies_var(&self, tape: &mut Tape) -> Result<Var> {
        self.ensure_nonempty()?;
        let l = &self.layout;
        tape.constant(vec![self.n, l.ally_rows, l.entity], self.allies.clone())
    }

    pub fn enemies_var(&self, tape: &mut Tape) -> Result<Var> {
        self.ensure_nonempty()?;
        let l = &self.layout;
        tape.constant(vec![self.n, l.enemy_rows, l.entity], self.enemies.clone())
    }

    /// Fixed-order concatenation `[own, allies..., enemies...]`, (N, flat).
    pub fn flat_var(&self, tape: &mut Tape) -> Result<Var> {
        self.ensure_nonempty()?;
        let l = &self.layout;
        let (a, e) = (l.ally_rows * l.entity, l.enemy_rows * l.entity);
        let mut data = Vec::with_capacity(self.n * l.flat_width());
        for i in 0..self.n {
            data.extend_from_slice(&self.own[i * l.own..(i + 1) * l.own]);
            data.extend_from_slice(&self.allies[i * a..(i + 1) * a]);
            data.extend_from_slice(&self.enemies[i * e..(i + 1) * e]);
        }
        tape.constant(vec![self.n, l.flat_width()], data)
    }
}

/// An agent Q-network: maps a batch of observations to (N, n_actions)
/// Q-values, moves first, then one attack value per enemy row.
pub trait AgentNetwork: Module {
    fn layout(&self) -> ObsLayout;

    /// `noise` drives stochastic components (DPN's Gumbel sampling); with
    /// [`Noise::Off`] the forward pass is deterministic.
    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch, noise: &mut Noise<'_>) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Hpn,
    Dpn,
    Concat,
    BigConcat,
    DeepSet,
    HpnSet,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Hpn,
        Architecture::Dpn,
        Architecture::Concat,
        Architecture::BigConcat,
        Architecture::DeepSet,
        Architecture::HpnSet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Hpn => "hpn",
            Architecture::Dpn => "dpn",
            Architecture::Concat => "concat",
            Architecture::BigConcat => "big_concat",
            Architecture::DeepSet => "deepset",
            Architecture::HpnSet => "hpn_set",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "architecture",
                token: s.to_string(),
            })
    }
}

/// Width settings shared by the architectures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSizes {
    /// Embedding and trunk width `h`.
    pub hidden: usize,
    /// Hidden width of every hypernetwork.
    pub hyper_hidden: usize,
    /// Hidden width of DPN's assignment MLP.
    pub permutation_hidden: usize,
    pub gumbel_tau: f64,
}

impl Default for NetSizes {
    fn default() -> Self {
        NetSizes {
            hidden: 64,
            hyper_hidden: 64,
            permutation_hidden: 8,
            gumbel_tau: 0.5,
        }
    }
}

/// Any of the supported agent networks.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentNet {
    Hpn(HpnAgentNet),
    Dpn(DpnAgentNet),
    Concat(ConcatAgentNet),
    DeepSet(DeepSetAgentNet),
    HpnSet(HpnSetAgentNet),
}

impl AgentNet {
    pub fn build<R: Rng + ?Sized>(
        arch: Architecture,
        layout: ObsLayout,
        sizes: &NetSizes,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match arch {
            Architecture::Hpn => AgentNet::Hpn(HpnAgentNet::new(store, "agent", layout, sizes, rng)),
            Architecture::Dpn => AgentNet::Dpn(DpnAgentNet::new(store, "agent", layout, sizes, rng)?),
            Architecture::Concat => {
                AgentNet::Concat(ConcatAgentNet::new(store, "agent", layout, sizes.hidden, rng))
            }
            Architecture::BigConcat => {
                AgentNet::Concat(ConcatAgentNet::big(store, "agent", layout, sizes, rng)?)
            }
            Architecture::DeepSet => AgentNet::DeepSet(DeepSetAgentNet::new(
                store,
                "agent",
                layout,
                sizes.hidden,
                Pooling::Sum,
                rng,
            )),
            Architecture::HpnSet => {
                AgentNet::HpnSet(HpnSetAgentNet::new(store, "agent", layout, sizes, rng))
            }
        })
    }

    fn inner(&self) -> &dyn AgentNetwork {
        match self {
            AgentNet::Hpn(n) => n,
            AgentNet::Dpn(n) => n,
            AgentNet::Concat(n) => n,
            AgentNet::DeepSet(n) => n,
            AgentNet::HpnSet(n) => n,
        }
    }
}

impl Module for AgentNet {
    fn param_ids(&self) -> Vec<ParamId> {
        self.inner().param_ids()
    }
}

impl AgentNetwork for AgentNet {
    fn layout(&self) -> ObsLayout {
        self.inner().layout()
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch, noise: &mut Noise<'_>) -> Result<Var> {
        self.inner().forward(tape, bound, obs, noise)
    }
}

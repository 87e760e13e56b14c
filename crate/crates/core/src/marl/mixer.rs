use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Dense, Mlp, Module};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixerKind {
    Vdn,
    Qmix,
}

impl MixerKind {
    pub fn name(self) -> &'static str {
        match self {
            MixerKind::Vdn => "vdn",
            MixerKind::Qmix => "qmix",
        }
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vdn" => Ok(MixerKind::Vdn),
            "qmix" => Ok(MixerKind::Qmix),
            other => Err(Error::UnknownName {
                kind: "mixer",
                token: other.to_string(),
            }),
        }
    }
}

/// `Q_tot = Σᵢ Qᵢ`.
pub fn vdn_mix(per_agent_q: &[f64]) -> Result<f64> {
    if per_agent_q.is_empty() {
        return Err(Error::Empty("per-agent Q-values"));
    }
    Ok(per_agent_q.iter().sum())
}

/// Monotonic mixing network whose weights come from state-conditioned
/// hypernetworks; mixing weights pass through `abs`, biases do not.
#[derive(Debug, Clone, PartialEq)]
pub struct QmixMixer {
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed: usize,
    pub hyper_w1: Mlp,
    pub hyper_b1: Dense,
    pub hyper_w2: Mlp,
    pub value: Mlp,
}

impl QmixMixer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        hypernet_embed: usize,
        rng: &mut R,
    ) -> Self {
        QmixMixer {
            n_agents,
            state_dim,
            embed,
            hyper_w1: Mlp::new(store, &format!("{name}.hyper_w1"), &[state_dim, hypernet_embed, n_agents * embed], rng),
            hyper_b1: Dense::new(store, &format!("{name}.hyper_b1"), state_dim, embed, true, rng),
            hyper_w2: Mlp::new(store, &format!("{name}.hyper_w2"), &[state_dim, hypernet_embed, embed], rng),
            value: Mlp::new(store, &format!("{name}.value"), &[state_dim, embed, 1], rng),
        }
    }

    /// `qs` (B, n) and `states` (B, state_dim) to (B).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, qs: Var, states: Var) -> Result<Var> {
        let b = tape.shape(qs)[0];
        if tape.shape(states) != [b, self.state_dim] {
            return Err(Error::Shape {
                op: "qmix_mix",
                lhs: tape.shape(states).to_vec(),
                rhs: vec![b, self.state_dim],
            });
        }
        let (n, e) = (self.n_agents, self.embed);
        let w1 = self.hyper_w1.forward(tape, bound, states)?;
        let w1 = tape.abs(w1);
        let w1 = tape.reshape(w1, vec![b, n, e])?;
        let b1 = self.hyper_b1.forward(tape, bound, states)?;
        let q3 = tape.reshape(qs, vec![b, 1, n])?;
        let hidden = tape.bmm(q3, w1)?;
        let hidden = tape.reshape(hidden, vec![b, e])?;
        let hidden = tape.add(hidden, b1)?;
        let hidden = tape.elu(hidden);
        let w2 = self.hyper_w2.forward(tape, bound, states)?;
        let w2 = tape.abs(w2);
        let mixed = tape.mul(hidden, w2)?;
        let mixed = tape.sum(mixed, 1)?;
        let v = self.value.forward(tape, bound, states)?;
        let v = tape.reshape(v, vec![b])?;
        tape.add(mixed, v)
    }
}

impl Module for QmixMixer {
    fn param_ids(&self) -> Vec<ParamId> {
        [
            self.hyper_w1.param_ids(),
            self.hyper_b1.param_ids(),
            self.hyper_w2.param_ids(),
            self.value.param_ids(),
        ]
        .concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mixer {
    Vdn { n_agents: usize },
    Qmix(QmixMixer),
}

impl Mixer {
    pub fn build<R: Rng + ?Sized>(
        kind: MixerKind,
        store: &mut ParamStore,
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        hypernet_embed: usize,
        rng: &mut R,
    ) -> Self {
        match kind {
            MixerKind::Vdn => Mixer::Vdn { n_agents },
            MixerKind::Qmix => Mixer::Qmix(QmixMixer::new(store, "mixer", n_agents, state_dim, embed, hypernet_embed, rng)),
        }
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Vdn { .. } => MixerKind::Vdn,
            Mixer::Qmix(_) => MixerKind::Qmix,
        }
    }

    /// `qs` (B, n) chosen-action values and `states` (B, state_dim) to
    /// Q_tot (B).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, qs: Var, states: Var) -> Result<Var> {
        match self {
            Mixer::Vdn { n_agents } => {
                let s = tape.shape(qs);
                if s.len() != 2 || s[1] != *n_agents {
                    return Err(Error::Shape {
                        op: "vdn_mix",
                        lhs: s.to_vec(),
                        rhs: vec![0, *n_agents],
                    });
                }
                tape.sum(qs, 1)
            }
            Mixer::Qmix(m) => m.forward(tape, bound, qs, states),
        }
    }
}

impl Module for Mixer {
    fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Mixer::Vdn { .. } => Vec::new(),
            Mixer::Qmix(m) => m.param_ids(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vdn_sums() {
        assert_eq!(vdn_mix(&[1.0, 2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(vdn_mix(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(vdn_mix(&[3.0, 1.0, 2.0]).unwrap(), 6.0);
        assert!(vdn_mix(&[]).is_err());
    }

    fn force_constant(store: &mut ParamStore, mlp_last: &Dense, value: f64) {
        store.get_mut(mlp_last.weight).data_mut().fill(0.0);
        store.get_mut(mlp_last.bias.unwrap()).data_mut().fill(value);
    }

    #[test]
    fn unit_weights_reduce_to_vdn() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let m = QmixMixer::new(&mut store, "m", 3, 5, 1, 8, &mut rng);
        force_constant(&mut store, m.hyper_w1.last(), 1.0);
        force_constant(&mut store, &m.hyper_b1, 0.0);
        force_constant(&mut store, m.hyper_w2.last(), 1.0);
        force_constant(&mut store, m.value.last(), 0.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        // elu is the identity on positive sums
        let qs = tape.constant(vec![2, 3], vec![0.5, 1.0, 2.0, 0.1, 0.2, 0.3]).unwrap();
        let s = tape.constant(vec![2, 5], (0..10).map(f64::from).collect()).unwrap();
        let out = m.forward(&mut tape, &bound, qs, s).unwrap();
        assert!((tape.value(out)[0] - 3.5).abs() < 1e-12);
        assert!((tape.value(out)[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn state_width_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let m = QmixMixer::new(&mut store, "m", 2, 4, 8, 8, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let qs = tape.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let s = tape.constant(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(m.forward(&mut tape, &bound, qs, s), Err(Error::Shape { .. })));
        assert_eq!("mix".parse::<MixerKind>().unwrap_err(), Error::UnknownName { kind: "mixer", token: "mix".into() });
    }
}

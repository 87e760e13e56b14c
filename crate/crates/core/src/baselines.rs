//! Comparison agent networks: fixed-order concatenation (normal and BIG),
//! Deep Set pooling, and Deep Set pooling with the hypernetwork attack head.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentNetwork, NetSizes, ObsBatch};
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::env::ObsLayout;
use crate::error::{Error, Result};
use crate::gumbel::Noise;
use crate::hpn::{hpn_output_layer, HpnAgentNet, HyperLayer};
use crate::nn::{count_parameters, Dense, Mlp, Module};

/// Two hidden layers over `[own, allies..., enemies...]` in the order the
/// environment reports them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatAgentNet {
    pub layout: ObsLayout,
    pub mlp: Mlp,
}

impl ConcatAgentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layout: ObsLayout,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mlp = Mlp::new(
            store,
            &format!("{name}.mlp"),
            &[layout.flat_width(), hidden, hidden, layout.n_actions()],
            rng,
        );
        ConcatAgentNet { layout, mlp }
    }

    /// The BIG variant: the narrowest hidden width (a multiple of 8) whose
    /// parameter count exceeds that of an HPN agent with `sizes` for the same
    /// layout. Fails if the built network does not exceed it.
    pub fn big<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layout: ObsLayout,
        sizes: &NetSizes,
        rng: &mut R,
    ) -> Result<Self> {
        let target = hpn_parameter_count(layout, sizes);
        let width = big_concat_width(layout, target);
        let net = Self::new(store, name, layout, width, rng);
        let count = count_parameters(&net, store);
        if count <= target {
            return Err(Error::Config(format!(
                "BIG concat network has {count} parameters, not more than HPN's {target}"
            )));
        }
        Ok(net)
    }
}

fn concat_parameter_count(layout: ObsLayout, width: usize) -> usize {
    let (i, o) = (layout.flat_width(), layout.n_actions());
    (i + 1) * width + (width + 1) * width + (width + 1) * o
}

/// Smallest multiple of 8 whose concat network has more than `target`
/// parameters.
pub fn big_concat_width(layout: ObsLayout, target: usize) -> usize {
    (1..)
        .map(|i| 8 * i)
        .find(|&w| concat_parameter_count(layout, w) > target)
        .expect("parameter count grows without bound")
}

/// Parameter count of an HPN agent, obtained by building one in a scratch
/// store.
pub fn hpn_parameter_count(layout: ObsLayout, sizes: &NetSizes) -> usize {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = HpnAgentNet::new(&mut store, "count", layout, sizes, &mut rng);
    count_parameters(&net, &store)
}

impl Module for ConcatAgentNet {
    fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}

impl AgentNetwork for ConcatAgentNet {
    fn layout(&self) -> ObsLayout {
        self.layout
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch, _noise: &mut Noise<'_>) -> Result<Var> {
        let flat = obs.flat_var(tape)?;
        self.mlp.forward(tape, bound, flat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Sum,
    Mean,
    Max,
}

/// Symmetric pooling of (N, m, h) over the entity axis, giving (N, h).
pub fn pool_group(tape: &mut Tape, x: Var, pooling: Pooling) -> Result<Var> {
    match pooling {
        Pooling::Sum => tape.set_sum(x, 1),
        Pooling::Mean => {
            let m = tape.shape(x).get(1).copied().unwrap_or(1);
            let s = tape.set_sum(x, 1)?;
            Ok(tape.scale(s, 1.0 / m as f64))
        }
        Pooling::Max => tape.max(x, 1),
    }
}

/// Shared per-entity embedding `φ(x) = relu(x·W + b)` for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEmbedding {
    pub phi: Dense,
    pub pooling: Pooling,
}

impl SetEmbedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        entity: usize,
        hidden: usize,
        pooling: Pooling,
        rng: &mut R,
    ) -> Self {
        SetEmbedding {
            phi: Dense::new(store, &format!("{name}.phi"), entity, hidden, true, rng),
            pooling,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.phi.fan_in {
            return Err(Error::Shape {
                op: "set_embedding",
                lhs: s,
                rhs: vec![0, 0, self.phi.fan_in],
            });
        }
        let (n, m) = (s[0], s[1]);
        let rows = tape.reshape(x, vec![n * m, s[2]])?;
        let e = self.phi.forward(tape, bound, rows)?;
        let e = tape.relu(e);
        let e = tape.reshape(e, vec![n, m, self.phi.fan_out])?;
        pool_group(tape, e, self.pooling)
    }
}

impl Module for SetEmbedding {
    fn param_ids(&self) -> Vec<ParamId> {
        self.phi.param_ids()
    }
}

/// Input path shared by the Deep Set networks: own features plus pooled
/// ally and enemy embeddings, then one dense hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEncoder {
    pub own: Dense,
    pub allies: SetEmbedding,
    pub enemies: SetEmbedding,
    pub trunk: Dense,
}

impl SetEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layout: ObsLayout,
        hidden: usize,
        pooling: Pooling,
        rng: &mut R,
    ) -> Self {
        SetEncoder {
            own: Dense::new(store, &format!("{name}.own"), layout.own, hidden, true, rng),
            allies: SetEmbedding::new(store, &format!("{name}.ally_set"), layout.entity, hidden, pooling, rng),
            enemies: SetEmbedding::new(store, &format!("{name}.enemy_set"), layout.entity, hidden, pooling, rng),
            trunk: Dense::new(store, &format!("{name}.trunk"), hidden, hidden, true, rng),
        }
    }

    /// Hidden representation (N, h) and the enemy rows (N, m, k).
    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch) -> Result<(Var, Var)> {
        let own = obs.own_var(tape)?;
        let allies = obs.allies_var(tape)?;
        let enemies = obs.enemies_var(tape)?;
        let e_own = self.own.forward(tape, bound, own)?;
        let e_ally = self.allies.forward(tape, bound, allies)?;
        let e_enemy = self.enemies.forward(tape, bound, enemies)?;
        let emb = tape.add(e_own, e_ally)?;
        let emb = tape.add(emb, e_enemy)?;
        let emb = tape.relu(emb);
        let hidden = self.trunk.forward(tape, bound, emb)?;
        Ok((tape.relu(hidden), enemies))
    }
}

impl Module for SetEncoder {
    fn param_ids(&self) -> Vec<ParamId> {
        [
            self.own.param_ids(),
            self.allies.param_ids(),
            self.enemies.param_ids(),
            self.trunk.param_ids(),
        ]
        .concat()
    }
}

/// Deep Set agent: every output, attack values included, is read from the
/// pooled representation, so the network is invariant but not equivariant.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSetAgentNet {
    pub layout: ObsLayout,
    pub encoder: SetEncoder,
    pub move_head: Dense,
    pub attack_head: Dense,
}

impl DeepSetAgentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layout: ObsLayout,
        hidden: usize,
        pooling: Pooling,
        rng: &mut R,
    ) -> Self {
        DeepSetAgentNet {
            layout,
            encoder: SetEncoder::new(store, name, layout, hidden, pooling, rng),
            move_head: Dense::new(store, &format!("{name}.move"), hidden, layout.n_move, true, rng),
            attack_head: Dense::new(store, &format!("{name}.attack"), hidden, layout.enemy_rows, true, rng),
        }
    }
}

impl Module for DeepSetAgentNet {
    fn param_ids(&self) -> Vec<ParamId> {
        [
            self.encoder.param_ids(),
            self.move_head.param_ids(),
            self.attack_head.param_ids(),
        ]
        .concat()
    }
}

impl AgentNetwork for DeepSetAgentNet {
    fn layout(&self) -> ObsLayout {
        self.layout
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch, _noise: &mut Noise<'_>) -> Result<Var> {
        let (hidden, _) = self.encoder.forward(tape, bound, obs)?;
        let moves = self.move_head.forward(tape, bound, hidden)?;
        let attacks = self.attack_head.forward(tape, bound, hidden)?;
        tape.concat(&[moves, attacks], 1)
    }
}

/// Deep Set input path with the hypernetwork attack head of the HPN agent.
#[derive(Debug, Clone, PartialEq)]
pub struct HpnSetAgentNet {
    pub layout: ObsLayout,
    pub encoder: SetEncoder,
    pub move_head: Dense,
    pub attack_head: HyperLayer,
}

impl HpnSetAgentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layout: ObsLayout,
        sizes: &NetSizes,
        rng: &mut R,
    ) -> Self {
        let h = sizes.hidden;
        HpnSetAgentNet {
            layout,
            encoder: SetEncoder::new(store, name, layout, h, Pooling::Sum, rng),
            move_head: Dense::new(store, &format!("{name}.move"), h, layout.n_move, true, rng),
            attack_head: HyperLayer::output(store, &format!("{name}.attack"), layout.entity, h, sizes.hyper_hidden, rng),
        }
    }
}

impl Module for HpnSetAgentNet {
    fn param_ids(&self) -> Vec<ParamId> {
        [
            self.encoder.param_ids(),
            self.move_head.param_ids(),
            self.attack_head.param_ids(),
        ]
        .concat()
    }
}

impl AgentNetwork for HpnSetAgentNet {
    fn layout(&self) -> ObsLayout {
        self.layout
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch, _noise: &mut Noise<'_>) -> Result<Var> {
        let (hidden, enemies) = self.encoder.forward(tape, bound, obs)?;
        let moves = self.move_head.forward(tape, bound, hidden)?;
        let attacks = hpn_output_layer(tape, bound, &self.attack_head, hidden, enemies)?;
        tape.concat(&[moves, attacks], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BattleConfig, BattleEnv};

    #[test]
    fn sum_pooling_of_identity_embedding() {
        let mut tape = Tape::new();
        let x = tape
            .constant(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let p = pool_group(&mut tape, x, Pooling::Sum).unwrap();
        assert_eq!(tape.value(p), &[9.0, 12.0]);
        let p = pool_group(&mut tape, x, Pooling::Mean).unwrap();
        assert_eq!(tape.value(p), &[3.0, 4.0]);
        let p = pool_group(&mut tape, x, Pooling::Max).unwrap();
        assert_eq!(tape.value(p), &[5.0, 6.0]);
    }

    #[test]
    fn big_exceeds_hpn_for_every_preset() {
        let sizes = NetSizes::default();
        for name in BattleConfig::preset_names() {
            let layout = BattleEnv::layout_for(&BattleConfig::preset(name).unwrap());
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let big = ConcatAgentNet::big(&mut store, "big", layout, &sizes, &mut rng).unwrap();
            assert!(count_parameters(&big, &store) > hpn_parameter_count(layout, &sizes));
        }
    }

    #[test]
    fn zero_input_gives_composed_biases() {
        let layout = ObsLayout {
            own: 3,
            entity: 4,
            ally_rows: 2,
            enemy_rows: 3,
            n_move: 6,
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ConcatAgentNet::new(&mut store, "c", layout, 8, &mut rng);
        let mut obs = ObsBatch::new(layout);
        obs.n = 1;
        obs.own = vec![0.0; 3];
        obs.allies = vec![0.0; 8];
        obs.enemies = vec![0.0; 12];
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let q = net.forward(&mut tape, &bound, &obs, &mut Noise::Off).unwrap();

        let mut h: Vec<f64> = store.get(net.mlp.layers[0].bias.unwrap()).data().iter().map(|b| b.max(0.0)).collect();
        for (i, layer) in net.mlp.layers.iter().enumerate().skip(1) {
            let w = store.get(layer.weight).data();
            let b = store.get(layer.bias.unwrap()).data();
            let mut next: Vec<f64> = (0..layer.fan_out)
                .map(|o| b[o] + (0..layer.fan_in).map(|j| h[j] * w[j * layer.fan_out + o]).sum::<f64>())
                .collect();
            if i + 1 < net.mlp.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        for (a, b) in tape.value(q).iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

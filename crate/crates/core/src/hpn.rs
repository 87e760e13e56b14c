//! Hypernetwork agent: every entity's input weights and every enemy's attack
//! output weights are generated from that entity's own features.

use rand::Rng;

use crate::agent::{AgentNetwork, NetSizes, ObsBatch};
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::env::ObsLayout;
use crate::error::{Error, Result};
use crate::gumbel::Noise;
use crate::nn::{Dense, Mlp, Module};

/// Hypernetwork mapping an entity feature vector (width `entity`) to weights
/// of a target layer of width `width`.
///
/// Input kind: generates a (entity, width) matrix per entity, plus one shared
/// bias. Output kind: generates a (width) weight vector and a scalar bias per
/// entity.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperLayer {
    pub hyper: Mlp,
    pub entity: usize,
    pub width: usize,
    pub shared_bias: Option<ParamId>,
}

impl HyperLayer {
    pub fn input<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        entity: usize,
        width: usize,
        hyper_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let hyper = Mlp::new(store, &format!("{name}.hyper"), &[entity, hyper_hidden, entity * width], rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[width], entity, rng);
        HyperLayer {
            hyper,
            entity,
            width,
            shared_bias: Some(bias),
        }
    }

    pub fn output<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        entity: usize,
        width: usize,
        hyper_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let hyper = Mlp::new(store, &format!("{name}.hyper"), &[entity, hyper_hidden, width + 1], rng);
        HyperLayer {
            hyper,
            entity,
            width,
            shared_bias: None,
        }
    }
}

impl Module for HyperLayer {
    fn param_ids(&self) -> Vec<ParamId> {
        self.hyper.param_ids().into_iter().chain(self.shared_bias).collect()
    }
}

fn entity_dims(tape: &Tape, x: Var, entity: usize, op: &'static str) -> Result<(usize, usize)> {
    let s = tape.shape(x);
    if s.len() != 3 || s[2] != entity {
        return Err(Error::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![0, 0, entity],
        });
    }
    Ok((s[0], s[1]))
}

/// `Σᵢ xᵢ·Wᵢ + b` with `Wᵢ` generated from `xᵢ`, for `x` of shape (N, m, k).
/// Returns (N, h). The sum is order-independent bit for bit.
pub fn hpn_input_layer(tape: &mut Tape, bound: &Bound, layer: &HyperLayer, x: Var) -> Result<Var> {
    let bias = layer
        .shared_bias
        .ok_or_else(|| Error::Config("hpn_input_layer needs an input-kind hyper layer".into()))?;
    let (k, h) = (layer.entity, layer.width);
    let (n, m) = entity_dims(tape, x, k, "hpn_input_layer")?;
    let rows = tape.reshape(x, vec![n * m, k])?;
    let w = layer.hyper.forward(tape, bound, rows)?;
    let w = tape.reshape(w, vec![n * m, k, h])?;
    let xr = tape.reshape(x, vec![n * m, 1, k])?;
    let per_entity = tape.bmm(xr, w)?;
    let per_entity = tape.reshape(per_entity, vec![n, m, h])?;
    let pooled = tape.set_sum(per_entity, 1)?;
    tape.add(pooled, bound.var(bias))
}

/// `Qᵢ = hidden·wᵢ + bᵢ` with `(wᵢ, bᵢ)` generated from enemy `i`; `hidden`
/// is (N, h) and `x` is (N, m, k). Returns (N, m) in input row order.
pub fn hpn_output_layer(tape: &mut Tape, bound: &Bound, layer: &HyperLayer, hidden: Var, x: Var) -> Result<Var> {
    let (k, h) = (layer.entity, layer.width);
    let (n, m) = entity_dims(tape, x, k, "hpn_output_layer")?;
    if tape.shape(hidden) != [n, h] {
        return Err(Error::Shape {
            op: "hpn_output_layer",
            lhs: tape.shape(hidden).to_vec(),
            rhs: vec![n, h],
        });
    }
    let rows = tape.reshape(x, vec![n * m, k])?;
    let generated = layer.hyper.forward(tape, bound, rows)?;
    let w = tape.slice(generated, 1, 0, h)?;
    let b = tape.slice(generated, 1, h, 1)?;
    let b = tape.reshape(b, vec![n * m])?;
    let index: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();
    let repeated = tape.gather_rows(hidden, &index)?;
    let prod = tape.mul(w, repeated)?;
    let q = tape.sum(prod, 1)?;
    let q = tape.add(q, b)?;
    tape.reshape(q, vec![n, m])
}

/// Own features through a dense layer, both entity groups through
/// hypernetwork input layers, summed into one embedding; a dense trunk; a
/// dense move head and a hypernetwork attack head.
#[derive(Debug, Clone, PartialEq)]
pub struct HpnAgentNet {
    pub layout: ObsLayout,
    pub own: Dense,
    pub ally_in: HyperLayer,
    pub enemy_in: HyperLayer,
    pub trunk: Dense,
    pub move_head: Dense,
    pub attack_head: HyperLayer,
}

impl HpnAgentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layout: ObsLayout,
        sizes: &NetSizes,
        rng: &mut R,
    ) -> Self {
        let (k, h, hh) = (layout.entity, sizes.hidden, sizes.hyper_hidden);
        HpnAgentNet {
            layout,
            own: Dense::new(store, &format!("{name}.own"), layout.own, h, true, rng),
            ally_in: HyperLayer::input(store, &format!("{name}.ally_in"), k, h, hh, rng),
            enemy_in: HyperLayer::input(store, &format!("{name}.enemy_in"), k, h, hh, rng),
            trunk: Dense::new(store, &format!("{name}.trunk"), h, h, true, rng),
            move_head: Dense::new(store, &format!("{name}.move"), h, layout.n_move, true, rng),
            attack_head: HyperLayer::output(store, &format!("{name}.attack"), k, h, hh, rng),
        }
    }
}

impl Module for HpnAgentNet {
    fn param_ids(&self) -> Vec<ParamId> {
        [
            self.own.param_ids(),
            self.ally_in.param_ids(),
            self.enemy_in.param_ids(),
            self.trunk.param_ids(),
            self.move_head.param_ids(),
            self.attack_head.param_ids(),
        ]
        .concat()
    }
}

impl AgentNetwork for HpnAgentNet {
    fn layout(&self) -> ObsLayout {
        self.layout
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch, _noise: &mut Noise<'_>) -> Result<Var> {
        let own = obs.own_var(tape)?;
        let allies = obs.allies_var(tape)?;
        let enemies = obs.enemies_var(tape)?;
        let e_own = self.own.forward(tape, bound, own)?;
        let e_ally = hpn_input_layer(tape, bound, &self.ally_in, allies)?;
        let e_enemy = hpn_input_layer(tape, bound, &self.enemy_in, enemies)?;
        let emb = tape.add(e_own, e_ally)?;
        let emb = tape.add(emb, e_enemy)?;
        let emb = tape.relu(emb);
        let hidden = self.trunk.forward(tape, bound, emb)?;
        let hidden = tape.relu(hidden);
        let moves = self.move_head.forward(tape, bound, hidden)?;
        let attacks = hpn_output_layer(tape, bound, &self.attack_head, hidden, enemies)?;
        tape.concat(&[moves, attacks], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entities(tape: &mut Tape, rows: &[[f64; 2]]) -> Var {
        let data = rows.iter().flatten().copied().collect();
        tape.constant(vec![1, rows.len(), 2], data).unwrap()
    }

    #[test]
    fn constant_hypernet_reduces_to_sum_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let layer = HyperLayer::input(&mut store, "l", 2, 3, 4, &mut rng);
        // zero the last hyper weight so the generated W is its bias
        let last = layer.hyper.last().clone();
        store.get_mut(last.weight).data_mut().fill(0.0);
        let w: Vec<f64> = store.get(last.bias.unwrap()).data().to_vec();
        let b: Vec<f64> = store.get(layer.shared_bias.unwrap()).data().to_vec();

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = entities(&mut tape, &[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]);
        let out = hpn_input_layer(&mut tape, &bound, &layer, x).unwrap();
        let s = [4.5, 1.0];
        for j in 0..3 {
            let expect = s[0] * w[j] + s[1] * w[3 + j] + b[j];
            assert!((tape.value(out)[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn single_entity_is_input_dependent_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = HyperLayer::input(&mut store, "l", 2, 3, 4, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = entities(&mut tape, &[[0.3, -0.7]]);
        let out = hpn_input_layer(&mut tape, &bound, &layer, x).unwrap();
        let rows = tape.constant(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let w = layer.hyper.forward(&mut tape, &bound, rows).unwrap();
        let w = tape.value(w).to_vec();
        let b = store.get(layer.shared_bias.unwrap()).data();
        for j in 0..3 {
            let expect = 0.3 * w[j] + -0.7 * w[3 + j] + b[j];
            assert!((tape.value(out)[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_enemies_swaps_attack_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let layer = HyperLayer::output(&mut store, "o", 2, 5, 8, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let hidden = tape.leaf(&Tensor::new(vec![1, 5], vec![0.1, -0.2, 0.3, 0.9, -1.0]).unwrap());
        let a = entities(&mut tape, &[[1.0, 0.0], [0.2, 0.5], [0.2, 0.5]]);
        let b = entities(&mut tape, &[[0.2, 0.5], [1.0, 0.0], [0.2, 0.5]]);
        let qa = hpn_output_layer(&mut tape, &bound, &layer, hidden, a).unwrap();
        let qb = hpn_output_layer(&mut tape, &bound, &layer, hidden, b).unwrap();
        let (qa, qb) = (tape.value(qa).to_vec(), tape.value(qb).to_vec());
        assert_eq!(qa[0], qb[1]);
        assert_eq!(qa[1], qb[0]);
        // identical entities get identical values
        assert_eq!(qa[1], qa[2]);
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let layer = HyperLayer::input(&mut store, "l", 3, 4, 4, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = entities(&mut tape, &[[1.0, 2.0]]);
        assert!(matches!(
            hpn_input_layer(&mut tape, &bound, &layer, x),
            Err(Error::Shape { .. })
        ));
    }
}

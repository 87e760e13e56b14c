//! Dense building blocks shared by every agent network.

use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Anything that owns parameters in a [`ParamStore`].
pub trait Module {
    fn param_ids(&self) -> Vec<ParamId>;
}

/// Total number of scalar parameters owned by `net`.
pub fn count_parameters(net: &dyn Module, store: &ParamStore) -> usize {
    net.param_ids().into_iter().map(|id| store.get(id).numel()).sum()
}

impl Module for () {
    fn param_ids(&self) -> Vec<ParamId> {
        Vec::new()
    }
}

/// Affine map `x·W + b` over the rows of a 2-D input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), &[fan_out], fan_in, rng));
        Dense {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add(y, bound.var(b)),
            None => Ok(y),
        }
    }
}

impl Module for Dense {
    fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Stack of dense layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes` lists every width from input to output.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = tape.relu(x);
            }
            x = layer.forward(tape, bound, x)?;
        }
        Ok(x)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn last(&self) -> &Dense {
        self.layers.last().expect("non-empty mlp")
    }
}

impl Module for Mlp {
    fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Module::param_ids).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 4, 3, true, &mut rng);
        assert_eq!(count_parameters(&d, &store), 15);
        assert_eq!(count_parameters(&(), &store), 0);
    }

    #[test]
    fn mlp_zero_input_gives_composed_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 2], &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(&Tensor::zeros(vec![1, 3]));
        let y = mlp.forward(&mut tape, &bound, x).unwrap();

        let b0 = store.get(mlp.layers[0].bias.unwrap()).data();
        let w1 = store.get(mlp.layers[1].weight);
        let b1 = store.get(mlp.layers[1].bias.unwrap()).data();
        for o in 0..2 {
            let expect: f64 = b1[o]
                + (0..5)
                    .map(|h| b0[h].max(0.0) * w1.at(&[h, o]))
                    .sum::<f64>();
            assert!((tape.value(y)[o] - expect).abs() < 1e-12);
        }
    }
}

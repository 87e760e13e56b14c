//! Learned canonical ordering: a small MLP scores every entity for every
//! output slot, slots are filled one at a time with masked hard Gumbel
//! samples, and the resulting permutation matrix sorts the group before a
//! downstream network. Entity-targeted outputs are mapped back with the
//! transpose.

use rand::Rng;

use crate::agent::{AgentNetwork, NetSizes, ObsBatch};
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::env::ObsLayout;
use crate::error::{Error, Result};
use crate::gumbel::{gumbel_softmax, GumbelConfig, Noise};
use crate::nn::{Mlp, Module};

/// Added (times the mask) to logits of columns already assigned.
pub const ASSIGNED_PENALTY: f64 = -1e10;

/// Binary square matrix with exactly one unit entry per row and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMatrix {
    /// `perm[j]` is the column of the unit entry in row `j`, so `(M·X)[j] =
    /// X[perm[j]]`.
    perm: Vec<usize>,
}

impl PermutationMatrix {
    pub fn identity(n: usize) -> Self {
        PermutationMatrix {
            perm: (0..n).collect(),
        }
    }

    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Size(format!("{perm:?} is not a permutation")));
            }
        }
        Ok(PermutationMatrix { perm })
    }

    /// Validates a row-major (rows, cols) matrix.
    pub fn from_entries(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if rows != cols || entries.len() != rows * cols {
            return Err(Error::Size(format!(
                "{} entries cannot form a square {rows}x{cols} permutation matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|&e| e != 0.0 && e != 1.0) {
            return Err(Error::Size("permutation matrix entries must be 0 or 1".into()));
        }
        let mut perm = Vec::with_capacity(rows);
        for row in entries.chunks(cols) {
            let ones: Vec<usize> = (0..cols).filter(|&c| row[c] == 1.0).collect();
            if ones.len() != 1 {
                return Err(Error::Size(format!("row {row:?} is not one-hot")));
            }
            perm.push(ones[0]);
        }
        Self::from_perm(perm)
    }

    pub fn size(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn entries(&self) -> Vec<f64> {
        let n = self.perm.len();
        let mut out = vec![0.0; n * n];
        for (j, &c) in self.perm.iter().enumerate() {
            out[j * n + c] = 1.0;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (j, &c) in self.perm.iter().enumerate() {
            inv[c] = j;
        }
        PermutationMatrix { perm: inv }
    }
}

/// Assignment network for one entity group of fixed size `width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpnNet {
    pub mlp: Mlp,
    pub width: usize,
    pub gumbel: GumbelConfig,
}

impl DpnNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        entity: usize,
        hidden: usize,
        width: usize,
        gumbel: GumbelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        gumbel.validate()?;
        Ok(DpnNet {
            mlp: Mlp::new(store, name, &[entity, hidden, width], rng),
            width,
            gumbel,
        })
    }
}

impl Module for DpnNet {
    fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}

/// Builds one permutation matrix per sample of `x` (N, m, k), returned as
/// (N, m, m). Slot `d` takes the highest-scoring (noisy, unless `noise` is
/// off or the config is deterministic) entity not taken by an earlier slot.
pub fn generate_permutation_matrix(
    tape: &mut Tape,
    bound: &Bound,
    net: &DpnNet,
    x: Var,
    noise: &mut Noise<'_>,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "generate_permutation_matrix",
            lhs: s,
            rhs: vec![0, net.width, 0],
        });
    }
    let (n, m, k) = (s[0], s[1], s[2]);
    if m != net.width {
        return Err(Error::Size(format!(
            "group of {m} entities for a permutation net of width {}",
            net.width
        )));
    }
    let rows = tape.reshape(x, vec![n * m, k])?;
    let logits = net.mlp.forward(tape, bound, rows)?;
    let logits = tape.reshape(logits, vec![n, m, m])?;
    let slots = tape.transpose(logits)?;
    let mut invalid = vec![0.0; n * m];
    let mut picked = Vec::with_capacity(m);
    for d in 0..m {
        let row = tape.slice(slots, 1, d, 1)?;
        let row = tape.reshape(row, vec![n, m])?;
        let penalty = tape.constant(vec![n, m], invalid.iter().map(|&v| v * ASSIGNED_PENALTY).collect())?;
        let masked = tape.add(row, penalty)?;
        let y = gumbel_softmax(tape, masked, &net.gumbel, noise)?;
        for (acc, &v) in invalid.iter_mut().zip(tape.value(y)) {
            *acc += v;
        }
        picked.push(tape.reshape(y, vec![n, 1, m])?);
    }
    tape.concat(&picked, 1)
}

/// Reads the (N, m, m) output of [`generate_permutation_matrix`] back as
/// validated matrices.
pub fn permutation_matrices(tape: &Tape, m: Var) -> Result<Vec<PermutationMatrix>> {
    let s = tape.shape(m);
    if s.len() != 3 {
        return Err(Error::Size(format!("expected (N, m, m), got {s:?}")));
    }
    let (rows, cols) = (s[1], s[2]);
    tape.value(m)
        .chunks(rows * cols)
        .map(|c| PermutationMatrix::from_entries(rows, cols, c))
        .collect()
}

/// Canonicalizes `x` (N, m, k), applies `downstream` to the sorted group and,
/// if `equivariant_start` is given, maps output columns
/// `start..start+m` back to the input order with `Mᵀ`. Returns the
/// assembled (N, out) output and the permutation matrices.
pub fn dpn_forward<F>(
    tape: &mut Tape,
    bound: &Bound,
    net: &DpnNet,
    x: Var,
    noise: &mut Noise<'_>,
    downstream: F,
    equivariant_start: Option<usize>,
) -> Result<(Var, Var)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let m = generate_permutation_matrix(tape, bound, net, x, noise)?;
    let canonical = tape.bmm(m, x)?;
    let y = downstream(tape, canonical)?;
    let out = match equivariant_start {
        None => y,
        Some(start) => unpermute_columns(tape, y, m, start)?,
    };
    Ok((out, m))
}

/// Replaces columns `start..start+m` of `y` (N, out) by `Mᵀ` applied to them.
fn unpermute_columns(tape: &mut Tape, y: Var, m: Var, start: usize) -> Result<Var> {
    let ys = tape.shape(y).to_vec();
    let ms = tape.shape(m).to_vec();
    let width = ms[1];
    if ys.len() != 2 || ys[0] != ms[0] || start + width > ys[1] {
        return Err(Error::Size(format!(
            "equivariant slice of {width} columns at {start} does not fit output {ys:?}"
        )));
    }
    let n = ys[0];
    let part = tape.slice(y, 1, start, width)?;
    let part = tape.reshape(part, vec![n, width, 1])?;
    let mt = tape.transpose(m)?;
    let back = tape.bmm(mt, part)?;
    let back = tape.reshape(back, vec![n, width])?;
    let mut pieces = Vec::with_capacity(3);
    if start > 0 {
        pieces.push(tape.slice(y, 1, 0, start)?);
    }
    pieces.push(back);
    let rest = ys[1] - start - width;
    if rest > 0 {
        pieces.push(tape.slice(y, 1, start + width, rest)?);
    }
    tape.concat(&pieces, 1)
}

/// Separate assignment nets canonicalize the ally and the enemy group; a
/// dense Q network reads own features and both sorted groups; attack values
/// are mapped back through the enemy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DpnAgentNet {
    pub layout: ObsLayout,
    pub ally: DpnNet,
    pub enemy: DpnNet,
    pub q: Mlp,
}

impl DpnAgentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layout: ObsLayout,
        sizes: &NetSizes,
        rng: &mut R,
    ) -> Result<Self> {
        let gumbel = GumbelConfig {
            tau: sizes.gumbel_tau,
            hard: true,
            deterministic: false,
        };
        let k = layout.entity;
        let ally = DpnNet::new(store, &format!("{name}.perm_ally"), k, sizes.permutation_hidden, layout.ally_rows, gumbel, rng)?;
        let enemy = DpnNet::new(store, &format!("{name}.perm_enemy"), k, sizes.permutation_hidden, layout.enemy_rows, gumbel, rng)?;
        let q = Mlp::new(
            store,
            &format!("{name}.q"),
            &[layout.flat_width(), sizes.hidden, sizes.hidden, layout.n_actions()],
            rng,
        );
        Ok(DpnAgentNet {
            layout,
            ally,
            enemy,
            q,
        })
    }

    /// Q-values together with the ally and enemy permutation matrices.
    pub fn forward_with_matrices(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        obs: &ObsBatch,
        noise: &mut Noise<'_>,
    ) -> Result<(Var, Var, Var)> {
        let l = self.layout;
        let n = obs.n;
        let own = obs.own_var(tape)?;
        let allies = obs.allies_var(tape)?;
        let enemies = obs.enemies_var(tape)?;
        let m1 = generate_permutation_matrix(tape, bound, &self.ally, allies, noise)?;
        let canon_allies = tape.bmm(m1, allies)?;
        let canon_allies = tape.reshape(canon_allies, vec![n, l.ally_rows * l.entity])?;
        let (q, m2) = dpn_forward(
            tape,
            bound,
            &self.enemy,
            enemies,
            noise,
            |tape, canon_enemies| {
                let canon_enemies = tape.reshape(canon_enemies, vec![n, l.enemy_rows * l.entity])?;
                let flat = tape.concat(&[own, canon_allies, canon_enemies], 1)?;
                self.q.forward(tape, bound, flat)
            },
            Some(l.n_move),
        )?;
        Ok((q, m1, m2))
    }
}

impl Module for DpnAgentNet {
    fn param_ids(&self) -> Vec<ParamId> {
        [self.ally.param_ids(), self.enemy.param_ids(), self.q.param_ids()].concat()
    }
}

impl AgentNetwork for DpnAgentNet {
    fn layout(&self) -> ObsLayout {
        self.layout
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, obs: &ObsBatch, noise: &mut Noise<'_>) -> Result<Var> {
        Ok(self.forward_with_matrices(tape, bound, obs, noise)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A width-2 net on 2-feature entities whose logits are the features
    /// themselves: identity hidden layer, identity output layer, zero biases.
    fn passthrough_net(store: &mut ParamStore) -> DpnNet {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gumbel = GumbelConfig {
            tau: 1.0,
            hard: true,
            deterministic: true,
        };
        let net = DpnNet::new(store, "p", 2, 2, 2, gumbel, &mut rng).unwrap();
        for layer in &net.mlp.layers {
            store.get_mut(layer.weight).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            store.get_mut(layer.bias.unwrap()).data_mut().fill(0.0);
        }
        net
    }

    fn matrix_for(store: &ParamStore, net: &DpnNet, rows: &[f64]) -> (PermutationMatrix, Vec<f64>) {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(vec![1, 2, 2], rows.to_vec()).unwrap();
        let m = generate_permutation_matrix(&mut tape, &bound, net, x, &mut Noise::Off).unwrap();
        let mx = tape.bmm(m, x).unwrap();
        (permutation_matrices(&tape, m).unwrap().remove(0), tape.value(mx).to_vec())
    }

    #[test]
    fn hand_traced_assignment() {
        let mut store = ParamStore::new();
        let net = passthrough_net(&mut store);
        // logits L = X (entities as rows); L̂ = Lᵀ = [[2, 1], [0.5, 3]]
        let (m, mx) = matrix_for(&store, &net, &[2.0, 0.5, 1.0, 3.0]);
        assert_eq!(m.entries(), vec![1.0, 0.0, 0.0, 1.0]);
        // swapped rows: L̂ = [[1, 2], [3, 0.5]]
        let (m2, mx2) = matrix_for(&store, &net, &[1.0, 3.0, 2.0, 0.5]);
        assert_eq!(m2.entries(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(mx, mx2);
    }

    #[test]
    fn masking_prevents_reuse() {
        let mut store = ParamStore::new();
        let net = passthrough_net(&mut store);
        // both slots prefer entity 0; slot 1 must fall back to entity 1
        let (m, _) = matrix_for(&store, &net, &[5.0, 5.0, 0.0, 0.0]);
        assert_eq!(m.perm(), &[0, 1]);
    }

    #[test]
    fn identity_downstream_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let net = DpnNet::new(&mut store, "p", 3, 8, 3, GumbelConfig::default(), &mut rng).unwrap();
        let x: Vec<f64> = (0..9).map(|i| f64::from(i) * 0.37 - 1.0).collect();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(vec![1, 3, 3], x.clone()).unwrap();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(5);
        // downstream emits one value per sorted entity: its first feature
        let (out, _) = dpn_forward(
            &mut tape,
            &bound,
            &net,
            xv,
            &mut Noise::On(&mut noise_rng),
            |tape, c| {
                let first = tape.slice(c, 2, 0, 1)?;
                tape.reshape(first, vec![1, 3])
            },
            Some(0),
        )
        .unwrap();
        assert_eq!(tape.value(out), &[x[0], x[3], x[6]]);
    }

    #[test]
    fn matrix_validation() {
        assert!(PermutationMatrix::from_entries(2, 2, &[1.0, 0.0, 1.0, 0.0]).is_err());
        assert!(PermutationMatrix::from_entries(2, 2, &[0.5, 0.5, 0.0, 1.0]).is_err());
        assert!(PermutationMatrix::from_entries(2, 3, &[0.0; 6]).is_err());
        let m = PermutationMatrix::from_perm(vec![2, 0, 1]).unwrap();
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().perm(), &[1, 2, 0]);
    }

    #[test]
    fn size_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let net = DpnNet::new(&mut store, "p", 2, 8, 3, GumbelConfig::default(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(&Tensor::zeros(vec![1, 2, 2]));
        assert!(matches!(
            generate_permutation_matrix(&mut tape, &bound, &net, x, &mut Noise::Off),
            Err(Error::Size(_))
        ));
    }
}

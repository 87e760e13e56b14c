use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::obs::{random_permutation, ObsLayout, ObservationSet};
use super::{MultiAgentEnv, StepOutcome};
use crate::error::{Error, Result};

/// Presents an environment with its entity rows reordered. Each reset draws
/// one ally and one enemy permutation (gather convention) that hold for the
/// whole episode: enemy rows, attack actions, attack masks and the enemy
/// blocks of the state all follow the enemy permutation, and every agent's
/// ally rows follow the ally permutation. Agent order itself is unchanged.
#[derive(Debug, Clone)]
pub struct ShuffleWrapper<E> {
    inner: E,
    rng: Option<ChaCha8Rng>,
    ally_perm: Vec<usize>,
    enemy_perm: Vec<usize>,
}

impl<E: MultiAgentEnv> ShuffleWrapper<E> {
    pub fn new(inner: E, seed: u64) -> Self {
        let layout = inner.layout();
        ShuffleWrapper {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ally_perm: (0..layout.ally_rows).collect(),
            enemy_perm: (0..layout.enemy_rows).collect(),
            inner,
        }
    }

    /// Uses the given permutations for every episode.
    pub fn with_fixed(inner: E, ally_perm: Vec<usize>, enemy_perm: Vec<usize>) -> Result<Self> {
        let layout = inner.layout();
        for (perm, n) in [(&ally_perm, layout.ally_rows), (&enemy_perm, layout.enemy_rows)] {
            let mut seen = vec![false; n];
            if perm.len() != n || !perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true)) {
                return Err(Error::Size(format!("{perm:?} is not a permutation of 0..{n}")));
            }
        }
        Ok(ShuffleWrapper {
            inner,
            rng: None,
            ally_perm,
            enemy_perm,
        })
    }

    pub fn ally_perm(&self) -> &[usize] {
        &self.ally_perm
    }

    pub fn enemy_perm(&self) -> &[usize] {
        &self.enemy_perm
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Real action for a wrapped action index.
    pub fn unwrap_action(&self, action: usize) -> usize {
        let n_move = self.inner.layout().n_move;
        if action < n_move {
            action
        } else {
            n_move + self.enemy_perm[action - n_move]
        }
    }
}

impl<E: MultiAgentEnv> MultiAgentEnv for ShuffleWrapper<E> {
    fn reset(&mut self, seed: u64) -> Result<()> {
        if let Some(rng) = self.rng.as_mut() {
            self.ally_perm = random_permutation(self.ally_perm.len(), rng);
            self.enemy_perm = random_permutation(self.enemy_perm.len(), rng);
        }
        self.inner.reset(seed)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        let real: Vec<usize> = actions
            .iter()
            .map(|&a| {
                if a >= self.inner.layout().n_actions() {
                    a
                } else {
                    self.unwrap_action(a)
                }
            })
            .collect();
        self.inner.step(&real)
    }

    fn observations(&self) -> Vec<ObservationSet> {
        self.inner
            .observations()
            .iter()
            .map(|o| o.permuted(&self.ally_perm, &self.enemy_perm))
            .collect()
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        let n_move = self.inner.layout().n_move;
        self.inner
            .avail_actions()
            .into_iter()
            .map(|mask| {
                let mut out = mask[..n_move].to_vec();
                out.extend(self.enemy_perm.iter().map(|&src| mask[n_move + src]));
                out
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let s = self.inner.state();
        let k = self.inner.layout().entity;
        let split = self.inner.n_agents() * k;
        let mut out = s[..split].to_vec();
        for &src in &self.enemy_perm {
            out.extend_from_slice(&s[split + src * k..split + (src + 1) * k]);
        }
        out
    }

    fn layout(&self) -> ObsLayout {
        self.inner.layout()
    }

    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scripted::focus_fire_policy;
    use crate::env::{BattleConfig, BattleEnv, N_MOVE_ACTIONS};

    fn env() -> BattleEnv {
        BattleEnv::new(BattleConfig::preset("3v3").unwrap()).unwrap()
    }

    #[test]
    fn identity_is_transparent() {
        let mut plain = env();
        let mut wrapped = ShuffleWrapper::with_fixed(env(), vec![0, 1], vec![0, 1, 2]).unwrap();
        plain.reset(9).unwrap();
        wrapped.reset(9).unwrap();
        for _ in 0..60 {
            assert_eq!(plain.observations(), wrapped.observations());
            assert_eq!(plain.avail_actions(), wrapped.avail_actions());
            assert_eq!(plain.state(), wrapped.state());
            let a = focus_fire_policy(plain.battle_state(), plain.config());
            let x = plain.step(&a).unwrap();
            let y = wrapped.step(&a).unwrap();
            assert_eq!(x, y);
            if x.terminal {
                break;
            }
        }
    }

    #[test]
    fn attack_indices_follow_enemy_rows() {
        let mut w = ShuffleWrapper::new(env(), 4);
        w.reset(0).unwrap();
        let perm = w.enemy_perm().to_vec();
        let inner_obs = w.inner().observations();
        let obs = w.observations();
        for j in 0..perm.len() {
            assert_eq!(obs[0].enemies.row(j), inner_obs[0].enemies.row(perm[j]));
            assert_eq!(w.unwrap_action(N_MOVE_ACTIONS + j), N_MOVE_ACTIONS + perm[j]);
        }
        assert_eq!(w.unwrap_action(3), 3);
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(ShuffleWrapper::with_fixed(env(), vec![0, 0], vec![0, 1, 2]).is_err());
        assert!(ShuffleWrapper::with_fixed(env(), vec![0, 1], vec![0, 1]).is_err());
    }
}

use rand::Rng;

use super::replay::Episode;
use crate::env::{invert_permutation, random_permutation, ObsLayout};
use crate::error::{Error, Result};

/// Relabels an episode with an ally permutation (applied to every agent's
/// ally rows) and an enemy permutation (applied to enemy rows, enemy state
/// blocks, attack masks and recorded attack actions), gather convention.
/// Agent order and the agents' own state blocks are left as they are. The
/// result describes exactly the same play.
pub fn augment_episode(ep: &Episode, layout: &ObsLayout, ally_perm: &[usize], enemy_perm: &[usize]) -> Result<Episode> {
    if ally_perm.len() != layout.ally_rows || enemy_perm.len() != layout.enemy_rows {
        return Err(Error::Size(format!(
            "permutations of sizes {}/{} for groups of {}/{}",
            ally_perm.len(),
            enemy_perm.len(),
            layout.ally_rows,
            layout.enemy_rows
        )));
    }
    let n_agents = ep.n_agents();
    let k = layout.entity;
    let enemy_inv = invert_permutation(enemy_perm);
    let mut out = ep.clone();
    for (step, obs) in out.observations.iter_mut().enumerate() {
        if obs.iter().any(|o| !o.conforms_to(layout)) {
            return Err(Error::Size(format!("observation at step {step} does not match the layout")));
        }
        for o in obs.iter_mut() {
            *o = o.permuted(ally_perm, enemy_perm);
        }
    }
    for state in &mut out.states {
        let split = n_agents * k;
        if state.len() != split + layout.enemy_rows * k {
            return Err(Error::Size("state width does not match the layout".into()));
        }
        let original = state.clone();
        for (j, &src) in enemy_perm.iter().enumerate() {
            state[split + j * k..split + (j + 1) * k]
                .copy_from_slice(&original[split + src * k..split + (src + 1) * k]);
        }
    }
    let m = layout.n_move;
    for masks in &mut out.avail {
        for mask in masks.iter_mut() {
            let original = mask.clone();
            for (j, &src) in enemy_perm.iter().enumerate() {
                mask[m + j] = original[m + src];
            }
        }
    }
    for acts in &mut out.actions {
        for a in acts.iter_mut() {
            if *a >= m {
                *a = m + enemy_inv[*a - m];
            }
        }
    }
    Ok(out)
}

/// The batch followed by `num_permutations` randomly relabelled copies of
/// each episode.
pub fn augment_experience<R: Rng + ?Sized>(
    batch: &[Episode],
    layout: &ObsLayout,
    num_permutations: usize,
    rng: &mut R,
) -> Result<Vec<Episode>> {
    let mut out = batch.to_vec();
    for ep in batch {
        for _ in 0..num_permutations {
            let ally = random_permutation(layout.ally_rows, rng);
            let enemy = random_permutation(layout.enemy_rows, rng);
            out.push(augment_episode(ep, layout, &ally, &enemy)?);
        }
    }
    Ok(out)
}

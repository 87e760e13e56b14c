//! Hand-written rules: the built-in enemy controller and reference ally
//! players used as evaluation fixtures.

use super::battle::{move_offset, BattleState, EntityState, EAST, NOOP, NORTH, N_MOVE_ACTIONS, SOUTH, STOP, WEST};
use super::config::BattleConfig;
use super::{BattleEnv, MultiAgentEnv, Team};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnemyAction {
    Attack(usize),
    Move(i32, i32),
    Stay,
}

/// Move preference on ties: x-axis first, negative direction first.
const STEP_ORDER: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn manhattan(ax: i32, ay: i32, b: &EntityState) -> i32 {
    (ax - b.x).abs() + (ay - b.y).abs()
}

fn chebyshev_to(ax: i32, ay: i32, b: &EntityState) -> i32 {
    (ax - b.x).abs().max((ay - b.y).abs())
}

/// Nearest living unit by Chebyshev distance, lowest index on ties.
fn nearest(from: &EntityState, units: &[EntityState]) -> Option<usize> {
    units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.alive())
        .min_by_key(|(i, u)| (from.chebyshev(u), *i))
        .map(|(i, _)| i)
}

/// Best single step from `(x, y)` towards `target`: among in-bounds, free
/// cells that shorten the Manhattan distance, the one with the smallest
/// resulting Chebyshev distance, ties broken by [`STEP_ORDER`].
fn step_towards(
    state: &BattleState,
    cfg: &BattleConfig,
    x: i32,
    y: i32,
    target: &EntityState,
) -> Option<(i32, i32)> {
    let here = manhattan(x, y, target);
    let mut best: Option<((i32, i32), i32)> = None;
    for (dx, dy) in STEP_ORDER {
        let (nx, ny) = (x + dx, y + dy);
        let inside = nx >= 0 && ny >= 0 && (nx as usize) < cfg.width && (ny as usize) < cfg.height;
        if !inside || state.occupied(nx, ny) || manhattan(nx, ny, target) >= here {
            continue;
        }
        let d = chebyshev_to(nx, ny, target);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some(((dx, dy), d));
        }
    }
    best.map(|(step, _)| step)
}

/// First free in-bounds step in [`STEP_ORDER`] that shortens the Manhattan
/// distance to `cell`.
fn step_to_cell(state: &BattleState, cfg: &BattleConfig, x: i32, y: i32, cell: (i32, i32)) -> Option<(i32, i32)> {
    let here = (x - cell.0).abs() + (y - cell.1).abs();
    STEP_ORDER.into_iter().find(|&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        let inside = nx >= 0 && ny >= 0 && (nx as usize) < cfg.width && (ny as usize) < cfg.height;
        inside && !state.occupied(nx, ny) && (nx - cell.0).abs() + (ny - cell.1).abs() < here
    })
}

/// Each living enemy attacks the lowest-index living ally within range;
/// otherwise it steps towards the nearest ally. Moves are resolved in enemy
/// index order against the positions left by earlier enemies, so the returned
/// moves never collide.
pub fn scripted_enemy_policy(state: &BattleState, cfg: &BattleConfig) -> Vec<EnemyAction> {
    let mut scratch = state.clone();
    let mut actions = Vec::with_capacity(state.enemies.len());
    for e in 0..scratch.enemies.len() {
        let me = scratch.enemies[e];
        if !me.alive() {
            actions.push(EnemyAction::Stay);
            continue;
        }
        let in_range = scratch
            .allies
            .iter()
            .position(|a| a.alive() && me.chebyshev(a) <= cfg.attack_range);
        if let Some(target) = in_range {
            actions.push(EnemyAction::Attack(target));
            continue;
        }
        let Some(target) = nearest(&me, &scratch.allies) else {
            actions.push(EnemyAction::Stay);
            continue;
        };
        let goal = scratch.allies[target];
        match step_towards(&scratch, cfg, me.x, me.y, &goal) {
            Some((dx, dy)) => {
                scratch.enemies[e].x += dx;
                scratch.enemies[e].y += dy;
                actions.push(EnemyAction::Move(dx, dy));
            }
            None => actions.push(EnemyAction::Stay),
        }
    }
    actions
}

fn action_for_offset(dx: i32, dy: i32) -> usize {
    [NORTH, SOUTH, EAST, WEST]
        .into_iter()
        .find(|&a| move_offset(a) == Some((dx, dy)))
        .unwrap_or(STOP)
}

/// Reference ally controller. An ally with an enemy in range hits the weakest
/// one (lowest index on ties). Otherwise it closes in on the nearest enemy that
/// is already engaged by some ally, and holds position while no fight is on, so
/// approaching enemies step into range without striking first.
pub fn focus_fire_policy(state: &BattleState, cfg: &BattleConfig) -> Vec<usize> {
    let mut scratch = state.clone();
    let mut actions = Vec::with_capacity(state.allies.len());
    for a in 0..state.allies.len() {
        let me = scratch.allies[a];
        if !me.alive() {
            actions.push(NOOP);
            continue;
        }
        let in_range = |u: &EntityState, e: &EntityState| e.alive() && u.chebyshev(e) <= cfg.attack_range;
        let reachable = scratch
            .enemies
            .iter()
            .enumerate()
            .filter(|(_, e)| in_range(&me, e))
            .min_by_key(|(i, e)| (e.health, *i))
            .map(|(i, _)| i);
        if let Some(e) = reachable {
            actions.push(N_MOVE_ACTIONS + e);
            continue;
        }
        let engaged = scratch
            .enemies
            .iter()
            .filter(|e| scratch.allies.iter().any(|al| al.alive() && in_range(al, e)))
            .min_by_key(|e| (me.chebyshev(e), e.health))
            .copied();
        let step = engaged.and_then(|goal| step_towards(&scratch, cfg, me.x, me.y, &goal));
        match step {
            Some((dx, dy)) => {
                scratch.allies[a].x += dx;
                scratch.allies[a].y += dy;
                actions.push(action_for_offset(dx, dy));
            }
            None => actions.push(STOP),
        }
    }
    actions
}

/// Never attacks: living allies stop, dead ones noop.
pub fn passive_policy(state: &BattleState) -> Vec<usize> {
    state
        .allies
        .iter()
        .map(|a| if a.alive() { STOP } else { NOOP })
        .collect()
}

/// Holds a line at the left edge, centred on the enemies' mean row, until an
/// enemy comes within two cells of an ally; from then on plays
/// [`focus_fire_policy`]. The lowest-index ally takes an end slot because
/// enemies prefer it as a target.
pub fn formation_policy(state: &BattleState, cfg: &BattleConfig) -> Vec<usize> {
    let contact = state
        .enemies
        .iter()
        .any(|e| e.alive() && state.allies.iter().any(|a| a.alive() && a.chebyshev(e) <= 2));
    let living: Vec<&EntityState> = state.enemies.iter().filter(|e| e.alive()).collect();
    if contact || living.is_empty() {
        return focus_fire_policy(state, cfg);
    }
    let n = state.allies.len() as i32;
    let mean_y = living.iter().map(|e| f64::from(e.y)).sum::<f64>() / living.len() as f64;
    let top = ((mean_y.round() as i32) - (n - 1) / 2).clamp(0, (cfg.height as i32 - n).max(0));
    let mut scratch = state.clone();
    let mut actions = vec![STOP; state.allies.len()];
    let order = (1..state.allies.len()).chain(std::iter::once(0));
    for (slot, a) in order.enumerate() {
        let me = scratch.allies[a];
        if !me.alive() {
            actions[a] = NOOP;
            continue;
        }
        if let Some((dx, dy)) = step_to_cell(&scratch, cfg, me.x, me.y, (0, top + slot as i32)) {
            scratch.allies[a].x += dx;
            scratch.allies[a].y += dy;
            actions[a] = action_for_offset(dx, dy);
        }
    }
    actions
}

fn outcome_score(state: &BattleState) -> i64 {
    let win = if state.enemies_alive() { 0 } else { 1000 };
    win + i64::from(state.team_health(Team::Ally)) - i64::from(state.team_health(Team::Enemy))
}

/// One-step lookahead over every available joint action, each scored by
/// playing [`formation_policy`] to the end of the episode. Wins first, then
/// the largest health margin; the first joint action in odometer order wins
/// ties. Used as the strong reference player.
pub fn lookahead_policy(env: &BattleEnv) -> Result<Vec<usize>> {
    let options: Vec<Vec<usize>> = env
        .avail_actions()
        .iter()
        .map(|m| (0..m.len()).filter(|&a| m[a]).collect())
        .collect();
    let n = options.len();
    let mut idx = vec![0; n];
    let mut best: Option<(i64, Vec<usize>)> = None;
    loop {
        let joint: Vec<usize> = (0..n).map(|i| options[i][idx[i]]).collect();
        let mut sim = env.clone();
        let mut out = sim.step(&joint)?;
        while !out.terminal {
            let a = formation_policy(sim.battle_state(), sim.config());
            out = sim.step(&a)?;
        }
        let score = outcome_score(sim.battle_state());
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, joint));
        }
        let mut k = 0;
        loop {
            if k == n {
                return Ok(best.expect("at least one joint action").1);
            }
            idx[k] += 1;
            if idx[k] < options[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

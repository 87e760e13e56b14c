use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BattleConfig, SPAWN_COLUMNS};
use super::obs::{EntityGroup, ObsLayout, ObservationSet};
use super::scripted::{scripted_enemy_policy, EnemyAction};
use super::{MultiAgentEnv, StepOutcome};
use crate::error::{Error, Result};

pub const NOOP: usize = 0;
pub const STOP: usize = 1;
pub const NORTH: usize = 2;
pub const SOUTH: usize = 3;
pub const EAST: usize = 4;
pub const WEST: usize = 5;
/// Actions that do not target an enemy (noop, stop and the four moves).
pub const N_MOVE_ACTIONS: usize = 6;
/// Features per entity row: rel-x, rel-y, health fraction, alive flag.
pub const ENTITY_FEATURES: usize = 4;
/// Own features: x, y, health fraction.
pub const OWN_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Team {
    Ally,
    Enemy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityState {
    pub x: i32,
    pub y: i32,
    pub health: u32,
    pub team: Team,
}

impl EntityState {
    pub fn alive(&self) -> bool {
        self.health > 0
    }

    pub fn chebyshev(&self, other: &EntityState) -> u32 {
        (self.x - other.x)
            .unsigned_abs()
            .max((self.y - other.y).unsigned_abs())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BattleState {
    pub allies: Vec<EntityState>,
    pub enemies: Vec<EntityState>,
    pub step: usize,
}

impl BattleState {
    pub fn occupied(&self, x: i32, y: i32) -> bool {
        self.allies
            .iter()
            .chain(&self.enemies)
            .any(|e| e.alive() && e.x == x && e.y == y)
    }

    pub fn team_health(&self, team: Team) -> u32 {
        let units = match team {
            Team::Ally => &self.allies,
            Team::Enemy => &self.enemies,
        };
        units.iter().map(|u| u.health).sum()
    }

    pub fn allies_alive(&self) -> bool {
        self.allies.iter().any(EntityState::alive)
    }

    pub fn enemies_alive(&self) -> bool {
        self.enemies.iter().any(EntityState::alive)
    }
}

/// Grid offset of a move action, `None` for noop/stop/attacks.
pub fn move_offset(action: usize) -> Option<(i32, i32)> {
    match action {
        NORTH => Some((0, 1)),
        SOUTH => Some((0, -1)),
        EAST => Some((1, 0)),
        WEST => Some((-1, 0)),
        _ => None,
    }
}

/// Fully observable grid battle between learning allies and scripted
/// enemies.
#[derive(Debug, Clone)]
pub struct BattleEnv {
    cfg: BattleConfig,
    state: BattleState,
    done: bool,
}

impl BattleEnv {
    pub fn new(cfg: BattleConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = BattleEnv {
            state: BattleState {
                allies: Vec::new(),
                enemies: Vec::new(),
                step: 0,
            },
            cfg,
            done: true,
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn config(&self) -> &BattleConfig {
        &self.cfg
    }

    pub fn battle_state(&self) -> &BattleState {
        &self.state
    }

    /// Replaces the current state, e.g. to set up a specific engagement.
    pub fn set_state(&mut self, state: BattleState) {
        self.done = !state.allies_alive() || !state.enemies_alive();
        self.state = state;
    }

    pub fn layout_for(cfg: &BattleConfig) -> ObsLayout {
        ObsLayout {
            own: OWN_FEATURES,
            entity: ENTITY_FEATURES,
            ally_rows: cfg.n_allies - 1,
            enemy_rows: cfg.n_enemies,
            n_move: N_MOVE_ACTIONS,
        }
    }

    fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.cfg.width && (y as usize) < self.cfg.height
    }

    fn spawn(&self, rng: &mut ChaCha8Rng, n: usize, first_col: usize, team: Team) -> Vec<EntityState> {
        let h = self.cfg.height;
        sample(rng, SPAWN_COLUMNS * h, n)
            .into_iter()
            .map(|cell| EntityState {
                x: (first_col + cell / h) as i32,
                y: (cell % h) as i32,
                health: self.cfg.max_health,
                team,
            })
            .collect()
    }

    fn entity_row(&self, viewer: &EntityState, other: &EntityState) -> [f64; ENTITY_FEATURES] {
        if !other.alive() {
            return [0.0; ENTITY_FEATURES];
        }
        [
            f64::from(other.x - viewer.x) / (self.cfg.width - 1) as f64,
            f64::from(other.y - viewer.y) / (self.cfg.height - 1) as f64,
            f64::from(other.health) / f64::from(self.cfg.max_health),
            1.0,
        ]
    }

    fn observation(&self, agent: usize) -> ObservationSet {
        let me = &self.state.allies[agent];
        let k = ENTITY_FEATURES;
        let n_ally_rows = self.cfg.n_allies - 1;
        if !me.alive() {
            return ObservationSet {
                own: vec![0.0; OWN_FEATURES],
                allies: EntityGroup::new(k, vec![0.0; n_ally_rows * k]).expect("sized"),
                enemies: EntityGroup::new(k, vec![0.0; self.cfg.n_enemies * k]).expect("sized"),
            };
        }
        let own = vec![
            f64::from(me.x) / (self.cfg.width - 1) as f64,
            f64::from(me.y) / (self.cfg.height - 1) as f64,
            f64::from(me.health) / f64::from(self.cfg.max_health),
        ];
        let allies: Vec<f64> = self
            .state
            .allies
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .flat_map(|(_, a)| self.entity_row(me, a))
            .collect();
        let enemies: Vec<f64> = self
            .state
            .enemies
            .iter()
            .flat_map(|e| self.entity_row(me, e))
            .collect();
        ObservationSet {
            own,
            allies: EntityGroup::new(k, allies).expect("sized"),
            enemies: EntityGroup::new(k, enemies).expect("sized"),
        }
    }

    fn agent_avail(&self, agent: usize) -> Vec<bool> {
        let mut mask = vec![false; N_MOVE_ACTIONS + self.cfg.n_enemies];
        let me = &self.state.allies[agent];
        if !me.alive() {
            mask[NOOP] = true;
            return mask;
        }
        mask[STOP] = true;
        for a in NORTH..=WEST {
            let (dx, dy) = move_offset(a).expect("move action");
            mask[a] = self.in_bounds(me.x + dx, me.y + dy);
        }
        for (e, enemy) in self.state.enemies.iter().enumerate() {
            mask[N_MOVE_ACTIONS + e] = enemy.alive() && me.chebyshev(enemy) <= self.cfg.attack_range;
        }
        mask
    }

    fn entity_state_block(&self, u: &EntityState) -> [f64; ENTITY_FEATURES] {
        if !u.alive() {
            return [0.0; ENTITY_FEATURES];
        }
        [
            f64::from(u.x) / (self.cfg.width - 1) as f64,
            f64::from(u.y) / (self.cfg.height - 1) as f64,
            f64::from(u.health) / f64::from(self.cfg.max_health),
            1.0,
        ]
    }

    fn apply_damage(units: &mut [EntityState], hits: &[u32]) -> (u32, u32) {
        let (mut dealt, mut kills) = (0, 0);
        for (u, &h) in units.iter_mut().zip(hits) {
            if h == 0 || !u.alive() {
                continue;
            }
            let removed = h.min(u.health);
            u.health -= removed;
            dealt += removed;
            if u.health == 0 {
                kills += 1;
            }
        }
        (dealt, kills)
    }
}

impl MultiAgentEnv for BattleEnv {
    fn reset(&mut self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let allies = self.spawn(&mut rng, self.cfg.n_allies, 0, Team::Ally);
        let enemies = self.spawn(
            &mut rng,
            self.cfg.n_enemies,
            self.cfg.width - SPAWN_COLUMNS,
            Team::Enemy,
        );
        self.state = BattleState {
            allies,
            enemies,
            step: 0,
        };
        self.done = false;
        Ok(())
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        if actions.len() != self.cfg.n_allies {
            return Err(Error::Size(format!(
                "{} actions for {} agents",
                actions.len(),
                self.cfg.n_allies
            )));
        }
        for (agent, &a) in actions.iter().enumerate() {
            let mask = self.agent_avail(agent);
            if !mask.get(a).copied().unwrap_or(false) {
                return Err(Error::UnavailableAction { agent, action: a });
            }
        }

        for (agent, &a) in actions.iter().enumerate() {
            if let Some((dx, dy)) = move_offset(a) {
                let (nx, ny) = (self.state.allies[agent].x + dx, self.state.allies[agent].y + dy);
                if !self.state.occupied(nx, ny) {
                    let u = &mut self.state.allies[agent];
                    u.x = nx;
                    u.y = ny;
                }
            }
        }

        let mut hits = vec![0; self.cfg.n_enemies];
        for &a in actions {
            if a >= N_MOVE_ACTIONS {
                hits[a - N_MOVE_ACTIONS] += self.cfg.attack_damage;
            }
        }
        let (dealt, kills) = Self::apply_damage(&mut self.state.enemies, &hits);

        if self.state.enemies_alive() {
            let mut ally_hits = vec![0; self.cfg.n_allies];
            for (e, act) in scripted_enemy_policy(&self.state, &self.cfg).into_iter().enumerate() {
                match act {
                    EnemyAction::Attack(target) => ally_hits[target] += self.cfg.attack_damage,
                    EnemyAction::Move(dx, dy) => {
                        let u = &mut self.state.enemies[e];
                        u.x += dx;
                        u.y += dy;
                    }
                    EnemyAction::Stay => {}
                }
            }
            Self::apply_damage(&mut self.state.allies, &ally_hits);
        }

        self.state.step += 1;
        let won = !self.state.enemies_alive();
        let lost = !self.state.allies_alive();
        let timed_out = !won && !lost && self.state.step >= self.cfg.episode_limit;
        let reward = self.cfg.damage_scale * f64::from(dealt)
            + self.cfg.kill_bonus * f64::from(kills)
            + if won { self.cfg.win_bonus } else { 0.0 };
        self.done = won || lost || timed_out;
        Ok(StepOutcome {
            reward,
            terminal: self.done,
            won,
            timed_out,
        })
    }

    fn observations(&self) -> Vec<ObservationSet> {
        (0..self.cfg.n_allies).map(|i| self.observation(i)).collect()
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        (0..self.cfg.n_allies).map(|i| self.agent_avail(i)).collect()
    }

    fn state(&self) -> Vec<f64> {
        self.state
            .allies
            .iter()
            .chain(&self.state.enemies)
            .flat_map(|u| self.entity_state_block(u))
            .collect()
    }

    fn layout(&self) -> ObsLayout {
        Self::layout_for(&self.cfg)
    }

    fn n_agents(&self) -> usize {
        self.cfg.n_allies
    }

    fn state_dim(&self) -> usize {
        (self.cfg.n_allies + self.cfg.n_enemies) * ENTITY_FEATURES
    }

    fn episode_limit(&self) -> usize {
        self.cfg.episode_limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env3() -> BattleEnv {
        BattleEnv::new(BattleConfig::preset("3v3").unwrap()).unwrap()
    }

    fn unit(x: i32, y: i32, health: u32, team: Team) -> EntityState {
        EntityState { x, y, health, team }
    }

    #[test]
    fn reset_is_deterministic_and_full_health() {
        let mut a = env3();
        let mut b = env3();
        a.reset(42).unwrap();
        b.reset(42).unwrap();
        assert_eq!(a.battle_state(), b.battle_state());
        let s = a.battle_state();
        assert!(s.allies.iter().chain(&s.enemies).all(|u| u.health == 10));
        assert!(s.allies.iter().all(|u| u.x < 2));
        assert!(s.enemies.iter().all(|u| u.x >= 6));
    }

    #[test]
    fn observation_shapes() {
        let env = env3();
        let obs = env.observations();
        assert_eq!(obs.len(), 3);
        for o in &obs {
            assert_eq!(o.allies.rows(), 2);
            assert_eq!(o.enemies.rows(), 3);
            assert!(o.conforms_to(&env.layout()));
        }
        assert_eq!(env.state().len(), env.state_dim());
    }

    #[test]
    fn too_many_entities_rejected() {
        let cfg = BattleConfig {
            n_allies: 17,
            ..BattleConfig::preset("3v3").unwrap()
        };
        assert!(matches!(BattleEnv::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn moves_out_of_range_give_zero_reward() {
        let mut env = env3();
        env.reset(3).unwrap();
        let out = env.step(&[STOP, STOP, STOP]).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.terminal);
    }

    #[test]
    fn kill_reward_and_win() {
        let mut env = env3();
        env.set_state(BattleState {
            allies: vec![
                unit(3, 3, 10, Team::Ally),
                unit(0, 0, 10, Team::Ally),
                unit(0, 7, 10, Team::Ally),
            ],
            enemies: vec![
                unit(4, 3, 2, Team::Enemy),
                unit(7, 7, 10, Team::Enemy),
                unit(7, 0, 10, Team::Enemy),
            ],
            step: 0,
        });
        let out = env.step(&[N_MOVE_ACTIONS, STOP, STOP]).unwrap();
        assert!((out.reward - (0.1 * 2.0 + 1.0)).abs() < 1e-12);
        assert!(!out.won);

        env.set_state(BattleState {
            allies: vec![
                unit(3, 3, 10, Team::Ally),
                unit(0, 0, 10, Team::Ally),
                unit(0, 7, 10, Team::Ally),
            ],
            enemies: vec![
                unit(4, 3, 2, Team::Enemy),
                unit(7, 7, 0, Team::Enemy),
                unit(7, 0, 0, Team::Enemy),
            ],
            step: 0,
        });
        let out = env.step(&[N_MOVE_ACTIONS, STOP, STOP]).unwrap();
        assert!(out.terminal && out.won);
        assert!((out.reward - (0.2 + 1.0 + 10.0)).abs() < 1e-12);
    }

    #[test]
    fn unavailable_actions_rejected() {
        let mut env = env3();
        env.reset(5).unwrap();
        // nobody is in range at reset, and living agents may not noop
        let err = env.step(&[N_MOVE_ACTIONS, STOP, STOP]).unwrap_err();
        assert_eq!(
            err,
            Error::UnavailableAction {
                agent: 0,
                action: N_MOVE_ACTIONS
            }
        );
        assert!(env.step(&[NOOP, STOP, STOP]).is_err());
    }

    #[test]
    fn dead_agent_can_only_noop() {
        let mut env = env3();
        let mut s = env.battle_state().clone();
        s.allies[1].health = 0;
        env.set_state(s);
        let avail = env.avail_actions();
        assert_eq!(avail[1].iter().filter(|&&b| b).count(), 1);
        assert!(avail[1][NOOP]);
        assert!(!avail[0][NOOP]);
        let obs = env.observations();
        assert!(obs[1].own.iter().all(|&x| x == 0.0));
        assert_eq!(obs[0].allies.row(0), &[0.0; 4]);
    }

    #[test]
    fn time_limit_terminates_without_win() {
        let cfg = BattleConfig {
            episode_limit: 1,
            ..BattleConfig::preset("3v3").unwrap()
        };
        let mut env = BattleEnv::new(cfg).unwrap();
        env.reset(1).unwrap();
        let out = env.step(&[STOP, STOP, STOP]).unwrap();
        assert!(out.terminal && out.timed_out && !out.won);
        assert!(env.step(&[STOP, STOP, STOP]).is_err());
    }
}

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BattleConfig {
    pub width: usize,
    pub height: usize,
    pub n_allies: usize,
    pub n_enemies: usize,
    pub max_health: u32,
    /// Chebyshev distance within which an attack lands.
    pub attack_range: u32,
    pub attack_damage: u32,
    pub episode_limit: usize,
    /// Reward per hit point removed from enemies.
    pub damage_scale: f64,
    pub kill_bonus: f64,
    pub win_bonus: f64,
}

/// Columns on each side of the grid where units spawn.
pub const SPAWN_COLUMNS: usize = 2;

impl BattleConfig {
    /// Named presets. `3v3` is the default desk preset.
    pub fn preset(name: &str) -> Result<Self> {
        let base = BattleConfig {
            width: 8,
            height: 8,
            n_allies: 3,
            n_enemies: 3,
            max_health: 10,
            attack_range: 1,
            attack_damage: 2,
            episode_limit: 60,
            damage_scale: 0.1,
            kill_bonus: 1.0,
            win_bonus: 10.0,
        };
        let cfg = match name {
            "3v3" => base,
            "4v5" => BattleConfig {
                width: 9,
                height: 9,
                n_allies: 4,
                n_enemies: 5,
                ..base
            },
            "5v6" => BattleConfig {
                width: 10,
                height: 10,
                n_allies: 5,
                n_enemies: 6,
                episode_limit: 80,
                ..base
            },
            other => {
                return Err(Error::UnknownName {
                    kind: "preset",
                    token: other.to_string(),
                })
            }
        };
        Ok(cfg)
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["3v3", "4v5", "5v6"]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.width > 0
            && self.height > 0
            && self.max_health > 0
            && self.attack_range > 0
            && self.attack_damage > 0
            && self.episode_limit >= 1
            && self.damage_scale >= 0.0
            && self.kill_bonus >= 0.0
            && self.win_bonus >= 0.0;
        if !positive {
            return Err(Error::Config(format!("battle parameters must be positive: {self:?}")));
        }
        if self.n_allies < 2 || self.n_enemies < 1 {
            return Err(Error::Config(
                "need at least two allies and one enemy".into(),
            ));
        }
        if self.width < 2 * SPAWN_COLUMNS + 1 {
            return Err(Error::Config(format!("grid width {} too small", self.width)));
        }
        let region = SPAWN_COLUMNS * self.height;
        if self.n_allies > region || self.n_enemies > region {
            return Err(Error::Config(format!(
                "{} allies / {} enemies do not fit in {region} spawn cells",
                self.n_allies, self.n_enemies
            )));
        }
        Ok(())
    }
}

use crate::error::{Error, Result};

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub td_lambda: f64,
    pub epsilon_start: f64,
    pub epsilon_finish: f64,
    /// Env steps over which ε falls linearly from start to finish.
    pub epsilon_anneal_steps: u64,
    /// Replay capacity in episodes.
    pub buffer_size: usize,
    /// Episodes per training batch.
    pub batch_episodes: usize,
    /// Training steps between hard target-network copies.
    pub target_update_interval: u64,
    pub parallel_runners: usize,
    pub mixing_embed_dim: usize,
    pub hypernet_embed: usize,
    pub total_env_steps: u64,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    /// Augmented copies added per sampled episode; 0 disables augmentation.
    pub augment_permutations: usize,
    /// Training steps run after each round of parallel rollouts.
    pub updates_per_round: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            lr: 0.001,
            td_lambda: 0.6,
            epsilon_start: 1.0,
            epsilon_finish: 0.05,
            epsilon_anneal_steps: 100_000,
            buffer_size: 5000,
            batch_episodes: 32,
            target_update_interval: 200,
            parallel_runners: 8,
            mixing_embed_dim: 32,
            hypernet_embed: 64,
            total_env_steps: 200_000,
            seed: 0,
            grad_clip: 10.0,
            augment_permutations: 0,
            updates_per_round: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.td_lambda) {
            return fail("td_lambda must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_finish) {
            return fail("epsilon values must lie in [0, 1]");
        }
        if self.buffer_size == 0
            || self.batch_episodes == 0
            || self.target_update_interval == 0
            || self.parallel_runners == 0
            || self.mixing_embed_dim == 0
            || self.hypernet_embed == 0
            || self.updates_per_round == 0
        {
            return fail("sizes and intervals must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        Ok(())
    }

    /// Every field as `(key, value)` text, in declaration order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("gamma", self.gamma.to_string()),
            ("lr", self.lr.to_string()),
            ("td_lambda", self.td_lambda.to_string()),
            ("epsilon_start", self.epsilon_start.to_string()),
            ("epsilon_finish", self.epsilon_finish.to_string()),
            ("epsilon_anneal_steps", self.epsilon_anneal_steps.to_string()),
            ("buffer_size", self.buffer_size.to_string()),
            ("batch_episodes", self.batch_episodes.to_string()),
            ("target_update_interval", self.target_update_interval.to_string()),
            ("parallel_runners", self.parallel_runners.to_string()),
            ("mixing_embed_dim", self.mixing_embed_dim.to_string()),
            ("hypernet_embed", self.hypernet_embed.to_string()),
            ("total_env_steps", self.total_env_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("augment_permutations", self.augment_permutations.to_string()),
            ("updates_per_round", self.updates_per_round.to_string()),
        ]
    }

    /// Sets one field from text. Returns `Ok(false)` for keys that are not
    /// training fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "gamma" => self.gamma = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "td_lambda" => self.td_lambda = parse(key, value)?,
            "epsilon_start" => self.epsilon_start = parse(key, value)?,
            "epsilon_finish" => self.epsilon_finish = parse(key, value)?,
            "epsilon_anneal_steps" => self.epsilon_anneal_steps = parse(key, value)?,
            "buffer_size" => self.buffer_size = parse(key, value)?,
            "batch_episodes" => self.batch_episodes = parse(key, value)?,
            "target_update_interval" => self.target_update_interval = parse(key, value)?,
            "parallel_runners" => self.parallel_runners = parse(key, value)?,
            "mixing_embed_dim" => self.mixing_embed_dim = parse(key, value)?,
            "hypernet_embed" => self.hypernet_embed = parse(key, value)?,
            "total_env_steps" => self.total_env_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "augment_permutations" => self.augment_permutations = parse(key, value)?,
            "updates_per_round" => self.updates_per_round = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

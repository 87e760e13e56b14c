//! Seeded experiment runner: config parsing, the train/evaluate loop, CSV
//! curves and the multi-seed percentile aggregator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::agent::{Architecture, NetSizes};
use crate::env::{BattleConfig, BattleEnv, MultiAgentEnv, ShuffleWrapper};
use crate::error::{Error, Result};
use crate::marl::{
    collect_round, evaluate, greedy_policy, save_checkpoint, EpsilonSchedule, Learner, MixerKind, ReplayBuffer,
    Runner, TrainConfig,
};

pub const CSV_HEADER: &str = "env_steps,win_rate,loss";
pub const AGGREGATE_HEADER: &str = "env_steps,median,p25,p75";
/// Greedy episodes per evaluation.
pub const EVAL_EPISODES: usize = 32;
/// Evaluation episodes use seeds `EVAL_SEED_BASE + i`, disjoint from the
/// training stream in practice and identical at every evaluation.
pub const EVAL_SEED_BASE: u64 = 1 << 40;
const SHUFFLE_STREAM: u64 = 0x5348_5546_0000_0000;
const EVAL_SHUFFLE_STREAM: u64 = 0x4556_414c_0000_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub architecture: Architecture,
    pub mixer: MixerKind,
    /// Experience augmentation; uses `train.augment_permutations` extra
    /// copies per sampled episode, at least one.
    pub augment: bool,
    pub preset: String,
    /// Train and evaluate behind a [`ShuffleWrapper`].
    pub shuffle: bool,
    pub eval_interval: u64,
    pub seeds: Vec<u64>,
    pub sizes: NetSizes,
    pub train: TrainConfig,
    /// Output file prefix; derived from the other fields when absent.
    pub tag: Option<String>,
    /// Also write `<tag>_seed<k>.ckpt` with the final parameters.
    pub checkpoint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            architecture: Architecture::Hpn,
            mixer: MixerKind::Vdn,
            augment: false,
            preset: "3v3".into(),
            shuffle: false,
            eval_interval: 1000,
            seeds: (0..5).collect(),
            sizes: NetSizes::default(),
            train: TrainConfig::default(),
            tag: None,
            checkpoint: false,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Comma-separated seeds; `a..b` (exclusive) and `a..=b` ranges allowed.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            seeds.extend(parse_num::<u64>("seeds", a.trim())?..=parse_num("seeds", b.trim())?);
        } else if let Some((a, b)) = part.split_once("..") {
            seeds.extend(parse_num::<u64>("seeds", a.trim())?..parse_num("seeds", b.trim())?);
        } else {
            seeds.push(parse_num("seeds", part)?);
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config(format!("empty seed list {text:?}")));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Parses flat `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "architecture" => self.architecture = value.parse()?,
            "mixer" => self.mixer = value.parse()?,
            "augment" => self.augment = parse_bool(key, value)?,
            "preset" | "env" => {
                BattleConfig::preset(value)?;
                self.preset = value.to_string();
            }
            "shuffle" => self.shuffle = parse_bool(key, value)?,
            "eval_interval" => self.eval_interval = parse_num(key, value)?,
            "seeds" => self.seeds = parse_seed_list(value)?,
            "hidden" => self.sizes.hidden = parse_num(key, value)?,
            "hyper_hidden" => self.sizes.hyper_hidden = parse_num(key, value)?,
            "permutation_hidden" => self.sizes.permutation_hidden = parse_num(key, value)?,
            "gumbel_tau" => self.sizes.gumbel_tau = parse_num(key, value)?,
            "tag" => self.tag = Some(value.to_string()),
            "checkpoint" => self.checkpoint = parse_bool(key, value)?,
            _ => {
                if !self.train.set(key, value)? {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.sizes.hidden == 0 || self.sizes.hyper_hidden == 0 || self.sizes.permutation_hidden == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if let Some(tag) = &self.tag {
            if tag.is_empty() || tag.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid tag {tag:?}")));
            }
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        if let Some(t) = &self.tag {
            return t.clone();
        }
        let mut t = format!("{}_{}_{}", self.architecture, self.mixer, self.preset);
        if self.augment {
            t.push_str("_aug");
        }
        if self.shuffle {
            t.push_str("_shuffle");
        }
        t
    }

    pub fn output_path(&self, dir: &Path, seed: u64) -> PathBuf {
        dir.join(format!("{}_seed{seed}.csv", self.tag()))
    }

    /// Training config for one seed, with augmentation resolved.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seed;
        t.augment_permutations = if self.augment { t.augment_permutations.max(1) } else { 0 };
        t
    }

    /// Evaluation grid: multiples of `eval_interval` up to `total_env_steps`.
    pub fn eval_grid(&self) -> Vec<u64> {
        (1..=self.train.total_env_steps / self.eval_interval)
            .map(|i| i * self.eval_interval)
            .collect()
    }
}

/// One evaluation row of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub env_steps: u64,
    pub win_rate: f64,
    /// Mean training loss since the previous evaluation; NaN when no update
    /// ran in that window.
    pub loss: f64,
}

pub fn format_row(r: &EvalRecord) -> String {
    format!("{},{:.6},{:.6}", r.env_steps, r.win_rate, r.loss)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn make_env(cfg: &ExperimentConfig, battle: &BattleConfig, shuffle_seed: u64) -> Result<ExperimentEnv> {
    let env = BattleEnv::new(battle.clone())?;
    Ok(if cfg.shuffle {
        ExperimentEnv::Shuffled(ShuffleWrapper::new(env, shuffle_seed))
    } else {
        ExperimentEnv::Plain(env)
    })
}

/// Either a plain or a shuffled battle, so runners share one type.
#[derive(Debug, Clone)]
pub enum ExperimentEnv {
    Plain(BattleEnv),
    Shuffled(ShuffleWrapper<BattleEnv>),
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            ExperimentEnv::Plain($e) => $body,
            ExperimentEnv::Shuffled($e) => $body,
        }
    };
}

impl MultiAgentEnv for ExperimentEnv {
    fn reset(&mut self, seed: u64) -> Result<()> {
        delegate!(self, e => e.reset(seed))
    }
    fn step(&mut self, actions: &[usize]) -> Result<crate::env::StepOutcome> {
        delegate!(self, e => e.step(actions))
    }
    fn observations(&self) -> Vec<crate::env::ObservationSet> {
        delegate!(self, e => e.observations())
    }
    fn avail_actions(&self) -> Vec<Vec<bool>> {
        delegate!(self, e => e.avail_actions())
    }
    fn state(&self) -> Vec<f64> {
        delegate!(self, e => e.state())
    }
    fn layout(&self) -> crate::env::ObsLayout {
        delegate!(self, e => e.layout())
    }
    fn n_agents(&self) -> usize {
        delegate!(self, e => e.n_agents())
    }
    fn state_dim(&self) -> usize {
        delegate!(self, e => e.state_dim())
    }
    fn episode_limit(&self) -> usize {
        delegate!(self, e => e.episode_limit())
    }
}

/// Greedy win rate of `learner` on the fixed evaluation seeds.
pub fn evaluate_learner(cfg: &ExperimentConfig, learner: &Learner, seed: u64) -> Result<f64> {
    let battle = BattleConfig::preset(&cfg.preset)?;
    let mut envs = (0..cfg.train.parallel_runners.min(EVAL_EPISODES))
        .map(|i| make_env(cfg, &battle, seed ^ EVAL_SHUFFLE_STREAM ^ i as u64))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..EVAL_EPISODES as u64).map(|i| EVAL_SEED_BASE + i).collect();
    evaluate(&mut envs, &seeds, |views| greedy_policy(learner, views))
}

/// Trains one seed to `total_env_steps`, calling `on_eval` at every grid
/// point. Returns the records and the trained learner.
pub fn train_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    mut on_eval: impl FnMut(&EvalRecord) -> Result<()>,
) -> Result<(Vec<EvalRecord>, Learner)> {
    cfg.validate()?;
    let battle = BattleConfig::preset(&cfg.preset)?;
    let train = cfg.train_config(seed);
    let mut runners = (0..train.parallel_runners)
        .map(|i| Ok(Runner::new(make_env(cfg, &battle, seed ^ SHUFFLE_STREAM ^ i as u64)?, seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let probe = &runners[0].env;
    let mut learner = Learner::new(
        cfg.architecture,
        cfg.mixer,
        probe.layout(),
        probe.n_agents(),
        probe.state_dim(),
        &cfg.sizes,
        train.clone(),
    )?;
    let schedule = EpsilonSchedule {
        start: train.epsilon_start,
        finish: train.epsilon_finish,
        anneal_steps: train.epsilon_anneal_steps,
    };
    let mut buffer = ReplayBuffer::new(train.buffer_size);
    let grid = cfg.eval_grid();
    let mut next = 0;
    let mut records = Vec::with_capacity(grid.len());
    let (mut env_steps, mut loss_sum, mut loss_n) = (0u64, 0.0, 0usize);
    let mut noise_rng = learner.exploration_noise_rng();

    while next < grid.len() {
        let episodes = collect_round(&learner, &mut runners, schedule.value(env_steps), &mut noise_rng)?;
        for ep in episodes {
            env_steps += ep.len() as u64;
            buffer.push(ep);
        }
        if buffer.len() >= train.batch_episodes {
            for _ in 0..train.updates_per_round {
                loss_sum += learner.update(&buffer)?;
                loss_n += 1;
            }
        }
        while next < grid.len() && env_steps >= grid[next] {
            let record = EvalRecord {
                env_steps: grid[next],
                win_rate: evaluate_learner(cfg, &learner, seed)?,
                loss: if loss_n == 0 { f64::NAN } else { loss_sum / loss_n as f64 },
            };
            loss_sum = 0.0;
            loss_n = 0;
            on_eval(&record)?;
            records.push(record);
            next += 1;
        }
    }
    Ok((records, learner))
}

/// Runs one seed and writes its CSV, rewriting the file atomically after
/// every evaluation. Returns the output path.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
    overwrite: bool,
    mut progress: impl FnMut(u64, &EvalRecord),
) -> Result<PathBuf> {
    let path = cfg.output_path(out_dir, seed);
    if path.exists() && !overwrite {
        return Err(Error::OutputExists(path.display().to_string()));
    }
    let mut csv = format!("{CSV_HEADER}\n");
    write_atomic(&path, &csv)?;
    let (_, learner) = train_seed(cfg, seed, |r| {
        writeln!(csv, "{}", format_row(r)).expect("string write");
        progress(seed, r);
        write_atomic(&path, &csv)
    })?;
    if cfg.checkpoint {
        save_checkpoint(path.with_extension("ckpt"), &learner.cfg, &learner.params)?;
    }
    Ok(path)
}

/// Parses a learning-curve CSV into its rows.
pub fn read_curve(text: &str) -> Result<Vec<EvalRecord>> {
    let bad = |m: String| Error::Format { what: "curve csv", message: m };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad(format!("expected header `{CSV_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(format!("row {}: expected 3 fields", i + 1)));
            }
            let field = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {}: bad number {s:?}", i + 1)));
            Ok(EvalRecord {
                env_steps: f[0].parse().map_err(|_| bad(format!("row {}: bad step {:?}", i + 1, f[0])))?,
                win_rate: field(f[1])?,
                loss: field(f[2])?,
            })
        })
        .collect()
}

/// Linear-interpolation percentile of unsorted `values`, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Per-step median, 25th and 75th percentile of win rate across curves.
pub fn aggregate_curves(curves: &[Vec<EvalRecord>]) -> Result<Vec<(u64, f64, f64, f64)>> {
    let first = curves.first().ok_or(Error::Empty("curve files"))?;
    for (i, c) in curves.iter().enumerate().skip(1) {
        if c.len() != first.len() || c.iter().zip(first).any(|(a, b)| a.env_steps != b.env_steps) {
            return Err(Error::GridMismatch(format!("file {} differs from file 0", i)));
        }
    }
    Ok((0..first.len())
        .map(|row| {
            let v: Vec<f64> = curves.iter().map(|c| c[row].win_rate).collect();
            (first[row].env_steps, percentile(&v, 0.5), percentile(&v, 0.25), percentile(&v, 0.75))
        })
        .collect())
}

pub fn aggregate_csv(texts: &[String]) -> Result<String> {
    let curves = texts.iter().map(|t| read_curve(t)).collect::<Result<Vec<_>>>()?;
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for (step, med, p25, p75) in aggregate_curves(&curves)? {
        writeln!(out, "{step},{med:.6},{p25:.6},{p75:.6}").expect("string write");
    }
    Ok(out)
}

/// First evaluation step from which the win rate stays ≥ `threshold` for
/// `window` consecutive evaluations; `None` if that never happens.
pub fn first_sustained(curve: &[EvalRecord], threshold: f64, window: usize) -> Option<u64> {
    (0..curve.len())
        .find(|&i| i + window <= curve.len() && curve[i..i + window].iter().all(|r| r.win_rate >= threshold))
        .map(|i| curve[i].env_steps)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::augment_experience;
use super::config::TrainConfig;
use super::explore::masked_argmax;
use super::mixer::{Mixer, MixerKind};
use super::replay::{Episode, ReplayBuffer};
use super::targets::td_lambda_targets;
use crate::agent::{AgentNet, AgentNetwork, Architecture, NetSizes, ObsBatch};
use crate::autodiff::{clip_grad_norm, AdamState, ParamStore, Tape};
use crate::env::ObsLayout;
use crate::error::{Error, Result};
use crate::gumbel::Noise;

/// Stream offsets so the learner's generators never coincide with runner
/// streams derived from the same seed.
const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;
const SAMPLE_STREAM: u64 = 0x7361_6d70_6c00_0002;
const ROLLOUT_NOISE_STREAM: u64 = 0x726f_6c6c_6f00_0003;

/// Shared agent network plus mixer, their target copies and the optimizer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub cfg: TrainConfig,
    pub arch: Architecture,
    pub agent: AgentNet,
    pub mixer: Mixer,
    pub params: ParamStore,
    pub target: ParamStore,
    pub layout: ObsLayout,
    pub n_agents: usize,
    pub state_dim: usize,
    adam: AdamState,
    train_steps: u64,
    noise_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(
        arch: Architecture,
        mixer: MixerKind,
        layout: ObsLayout,
        n_agents: usize,
        state_dim: usize,
        sizes: &NetSizes,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let agent = AgentNet::build(arch, layout, sizes, &mut params, &mut init_rng)?;
        let mixer = Mixer::build(
            mixer,
            &mut params,
            n_agents,
            state_dim,
            cfg.mixing_embed_dim,
            cfg.hypernet_embed,
            &mut init_rng,
        );
        let adam = AdamState::new(&params, cfg.lr);
        Ok(Learner {
            target: params.clone(),
            noise_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_STREAM),
            sample_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLE_STREAM),
            arch,
            agent,
            mixer,
            params,
            layout,
            n_agents,
            state_dim,
            adam,
            train_steps: 0,
            cfg,
        })
    }

    /// Fresh generator for Gumbel noise during data collection.
    pub fn exploration_noise_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ ROLLOUT_NOISE_STREAM)
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Q-values (rows of `n_actions`) from the online parameters. Without a
    /// noise source DPN runs deterministically.
    pub fn q_values(&self, obs: &ObsBatch, noise: &mut Noise<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let q = self.agent.forward(&mut tape, &bound, obs, noise)?;
        let values = tape.value(q).to_vec();
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NanOutput);
        }
        Ok(values)
    }

    /// Samples a batch, optionally augments it and runs one training step.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<f64> {
        let batch = buffer.sample(self.cfg.batch_episodes, &mut self.sample_rng)?;
        let batch = if self.cfg.augment_permutations > 0 {
            augment_experience(&batch, &self.layout, self.cfg.augment_permutations, &mut self.sample_rng)?
        } else {
            batch
        };
        self.train_step(&batch)
    }

    fn stack(&self, batch: &[Episode]) -> Result<ObsBatch> {
        let mut obs = ObsBatch::new(self.layout);
        for ep in batch {
            for step in &ep.observations {
                for o in step {
                    obs.push(o)?;
                }
            }
        }
        Ok(obs)
    }

    /// One gradient step on `batch`: double-Q TD(λ) targets from the target
    /// network, mean squared error on the mixed chosen-action values, global
    /// norm clipping and Adam. Returns the loss.
    pub fn train_step(&mut self, batch: &[Episode]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let n = self.n_agents;
        for ep in batch {
            ep.validate()?;
            if ep.n_agents() != n {
                return Err(Error::Size(format!("episode with {} agents for {n}", ep.n_agents())));
            }
        }
        let n_actions = self.layout.n_actions();
        let obs = self.stack(batch)?;

        // row of (episode, t, agent) in the stacked batch
        let mut offsets = Vec::with_capacity(batch.len());
        let mut acc = 0;
        for ep in batch {
            offsets.push(acc);
            acc += (ep.len() + 1) * n;
        }
        let steps: usize = batch.iter().map(Episode::len).sum();

        // target side: values only
        let mut ttape = Tape::new();
        let tbound = self.target.bind(&mut ttape, false);
        let tq = self.agent.forward(&mut ttape, &tbound, &obs, &mut Noise::Off)?;

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let q = self.agent.forward(&mut tape, &bound, &obs, &mut Noise::On(&mut self.noise_rng))?;

        let mut cur_rows = Vec::with_capacity(steps * n);
        let mut chosen = Vec::with_capacity(steps * n);
        let mut next_q = Vec::with_capacity(steps * n);
        let mut cur_states = Vec::with_capacity(steps * self.state_dim);
        let mut next_states = Vec::with_capacity(steps * self.state_dim);
        {
            let (qv, tqv) = (tape.value(q), ttape.value(tq));
            for (ep, &off) in batch.iter().zip(&offsets) {
                for t in 0..ep.len() {
                    for i in 0..n {
                        cur_rows.push(off + t * n + i);
                        chosen.push(ep.actions[t][i]);
                        let r = off + (t + 1) * n + i;
                        let a = masked_argmax(&qv[r * n_actions..(r + 1) * n_actions], &ep.avail[t + 1][i])?;
                        next_q.push(tqv[r * n_actions + a]);
                    }
                    cur_states.extend_from_slice(&ep.states[t]);
                    next_states.extend_from_slice(&ep.states[t + 1]);
                }
            }
        }

        let next_q = ttape.constant(vec![steps, n], next_q)?;
        let next_states = ttape.constant(vec![steps, self.state_dim], next_states)?;
        let v_next = self.mixer.forward(&mut ttape, &tbound, next_q, next_states)?;
        let v_next = ttape.value(v_next).to_vec();
        let mut targets = Vec::with_capacity(steps);
        let mut start = 0;
        for ep in batch {
            let t_len = ep.len();
            targets.extend(td_lambda_targets(
                &ep.rewards,
                &v_next[start..start + t_len],
                ep.terminated,
                self.cfg.gamma,
                self.cfg.td_lambda,
            )?);
            start += t_len;
        }

        let q_cur = tape.gather_rows(q, &cur_rows)?;
        let q_chosen = tape.pick(q_cur, &chosen)?;
        let q_chosen = tape.reshape(q_chosen, vec![steps, n])?;
        let states = tape.constant(vec![steps, self.state_dim], cur_states)?;
        let q_tot = self.mixer.forward(&mut tape, &bound, q_chosen, states)?;
        let y = tape.constant(vec![steps], targets)?;
        let diff = tape.sub(q_tot, y)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.mean_all(sq)?;
        let loss_value = tape.value(loss)[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "loss {loss_value} at training step {}",
                self.train_steps
            )));
        }
        let grads = tape.backward(loss)?;
        let mut grads = self.params.collect_grads(&grads, &bound);
        clip_grad_norm(&mut grads, self.cfg.grad_clip);
        self.adam.step(&mut self.params, &grads)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.cfg.target_update_interval) {
            self.target.copy_from(&self.params)?;
        }
        Ok(loss_value)
    }
}

/// Greedy joint actions for several agents' observations, one row per agent.
pub fn greedy_actions(q: &[f64], n_actions: usize, avail: &[Vec<bool>]) -> Result<Vec<usize>> {
    avail
        .iter()
        .enumerate()
        .map(|(i, mask)| masked_argmax(&q[i * n_actions..(i + 1) * n_actions], mask))
        .collect()
}

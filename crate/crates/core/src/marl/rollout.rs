use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::explore::epsilon_greedy_select;
use super::learner::{greedy_actions, Learner};
use super::replay::Episode;
use crate::agent::ObsBatch;
use crate::env::MultiAgentEnv;
use crate::error::{Error, Result};
use crate::gumbel::Noise;

/// One environment with its own random stream (`seed ⊕ index`), used for
/// episode seeds and exploration.
pub struct Runner<E> {
    pub env: E,
    rng: ChaCha8Rng,
}

impl<E: MultiAgentEnv> Runner<E> {
    pub fn new(env: E, seed: u64, index: usize) -> Self {
        Runner {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed ^ index as u64),
        }
    }
}

struct Recording {
    episode: Episode,
    done: bool,
}

fn start_episode<E: MultiAgentEnv>(env: &E) -> Recording {
    Recording {
        episode: Episode {
            observations: vec![env.observations()],
            states: vec![env.state()],
            avail: vec![env.avail_actions()],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            won: false,
        },
        done: false,
    }
}

/// Plays one episode on every runner in lockstep, batching all live agents
/// into one forward pass per step. Actions are ε-greedy with each runner's
/// own stream; DPN noise comes from `noise_rng`. Episodes are returned in
/// runner order.
pub fn collect_round<E: MultiAgentEnv>(
    learner: &Learner,
    runners: &mut [Runner<E>],
    epsilon: f64,
    noise_rng: &mut ChaCha8Rng,
) -> Result<Vec<Episode>> {
    let layout = learner.layout;
    let n_actions = layout.n_actions();
    let mut recs = Vec::with_capacity(runners.len());
    for r in runners.iter_mut() {
        let seed = r.rng.gen::<u64>();
        r.env.reset(seed)?;
        recs.push(start_episode(&r.env));
    }
    while recs.iter().any(|r| !r.done) {
        let live: Vec<usize> = (0..recs.len()).filter(|&i| !recs[i].done).collect();
        let mut obs = ObsBatch::new(layout);
        for &i in &live {
            for o in recs[i].episode.observations.last().expect("started") {
                obs.push(o)?;
            }
        }
        let q = learner.q_values(&obs, &mut Noise::On(noise_rng))?;
        let per_env = learner.n_agents * n_actions;
        for (slot, &i) in live.iter().enumerate() {
            let runner = &mut runners[i];
            let rec = &mut recs[i];
            let avail = rec.episode.avail.last().expect("started").clone();
            let mut actions = Vec::with_capacity(avail.len());
            for (agent, mask) in avail.iter().enumerate() {
                let row = &q[slot * per_env + agent * n_actions..slot * per_env + (agent + 1) * n_actions];
                actions.push(epsilon_greedy_select(row, mask, epsilon, &mut runner.rng)?);
            }
            let out = runner.env.step(&actions)?;
            let ep = &mut rec.episode;
            ep.actions.push(actions);
            ep.rewards.push(out.reward);
            ep.observations.push(runner.env.observations());
            ep.states.push(runner.env.state());
            ep.avail.push(runner.env.avail_actions());
            if out.terminal {
                ep.terminated = !out.timed_out;
                ep.won = out.won;
                rec.done = true;
            }
        }
    }
    Ok(recs.into_iter().map(|r| r.episode).collect())
}

/// Fraction of won episodes, one episode per entry of `seeds`. Episodes run
/// in lockstep chunks of `envs.len()`; `policy` receives the environments
/// still playing and returns one joint action per environment.
pub fn evaluate<E, F>(envs: &mut [E], seeds: &[u64], mut policy: F) -> Result<f64>
where
    E: MultiAgentEnv,
    F: FnMut(&[&E]) -> Result<Vec<Vec<usize>>>,
{
    if envs.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("evaluation environments or seeds"));
    }
    let mut wins = 0usize;
    for chunk in seeds.chunks(envs.len()) {
        let active = &mut envs[..chunk.len()];
        for (env, &seed) in active.iter_mut().zip(chunk) {
            env.reset(seed)?;
        }
        let mut done = vec![false; chunk.len()];
        while done.iter().any(|d| !d) {
            let live: Vec<usize> = (0..chunk.len()).filter(|&i| !done[i]).collect();
            let actions = {
                let views: Vec<&E> = live.iter().map(|&i| &active[i]).collect();
                policy(&views)?
            };
            if actions.len() != live.len() {
                return Err(Error::Size(format!(
                    "policy returned {} joint actions for {} environments",
                    actions.len(),
                    live.len()
                )));
            }
            for (&i, a) in live.iter().zip(&actions) {
                let out = active[i].step(a)?;
                if out.terminal {
                    done[i] = true;
                    wins += usize::from(out.won);
                }
            }
        }
    }
    Ok(wins as f64 / seeds.len() as f64)
}

/// Greedy (ε = 0, deterministic DPN) joint actions of a learner for each
/// environment.
pub fn greedy_policy<E: MultiAgentEnv>(learner: &Learner, envs: &[&E]) -> Result<Vec<Vec<usize>>> {
    let mut obs = ObsBatch::new(learner.layout);
    for env in envs {
        for o in env.observations() {
            obs.push(&o)?;
        }
    }
    let q = learner.q_values(&obs, &mut Noise::Off)?;
    let n_actions = learner.layout.n_actions();
    let per_env = learner.n_agents * n_actions;
    envs.iter()
        .enumerate()
        .map(|(slot, env)| greedy_actions(&q[slot * per_env..(slot + 1) * per_env], n_actions, &env.avail_actions()))
        .collect()
}

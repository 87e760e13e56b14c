//! Helpers shared by the integration tests.
#![allow(dead_code)]

use itertools::Itertools;
use permnet::agent::{AgentNet, AgentNetwork, Architecture, NetSizes, ObsBatch};
use permnet::autodiff::{ParamStore, Tape};
use permnet::env::{BattleConfig, BattleEnv, EntityGroup, ObsLayout, ObservationSet};
use permnet::gumbel::Noise;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn layout(preset: &str) -> ObsLayout {
    BattleEnv::layout_for(&BattleConfig::preset(preset).unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rows<R: Rng>(n: usize, k: usize, rng: &mut R) -> EntityGroup {
    EntityGroup::new(k, (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_obs<R: Rng>(layout: &ObsLayout, rng: &mut R) -> ObservationSet {
    ObservationSet {
        own: (0..layout.own).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        allies: rows(layout.ally_rows, layout.entity, rng),
        enemies: rows(layout.enemy_rows, layout.entity, rng),
    }
}

pub fn all_perms(n: usize) -> Vec<Vec<usize>> {
    (0..n).permutations(n).collect()
}

pub fn build(arch: Architecture, layout: ObsLayout, sizes: &NetSizes, seed: u64) -> (AgentNet, ParamStore) {
    let mut store = ParamStore::new();
    let net = AgentNet::build(arch, layout, sizes, &mut store, &mut rng(seed)).unwrap();
    (net, store)
}

/// Q-values of one observation.
pub fn q_values(net: &AgentNet, store: &ParamStore, obs: &ObservationSet, noise: &mut Noise<'_>) -> Vec<f64> {
    let batch = ObsBatch::from_sets(net.layout(), std::slice::from_ref(obs)).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let q = net.forward(&mut tape, &bound, &batch, noise).unwrap();
    tape.value(q).to_vec()
}

pub fn small_sizes() -> NetSizes {
    NetSizes {
        hidden: 6,
        hyper_hidden: 5,
        permutation_hidden: 4,
        gumbel_tau: 0.5,
    }
}

/// Worst relative error of a finite-difference check of the whole agent
/// network plus QMIX mixer on a small TD-style loss. Parameters whose name
/// starts with a prefix in `frozen` are held constant (DPN's assignment nets,
/// whose hard forward is piecewise constant).
pub fn full_model_grad_check(arch: Architecture, seed: u64, frozen: &[&str]) -> f64 {
    use permnet::autodiff::{grad_check, Bound, Tensor};
    use permnet::env::MultiAgentEnv;
    use permnet::marl::{Mixer, MixerKind};

    let cfg = BattleConfig::preset("3v3").unwrap();
    let env = BattleEnv::new(cfg).unwrap();
    let (n, s_dim, layout) = (env.n_agents(), env.state_dim(), env.layout());
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let net = AgentNet::build(arch, layout, &small_sizes(), &mut store, &mut r).unwrap();
    let mixer = Mixer::build(MixerKind::Qmix, &mut store, n, s_dim, 4, 5, &mut r);

    let batch = 2;
    let sets: Vec<ObservationSet> = (0..batch * n).map(|_| random_obs(&layout, &mut r)).collect();
    let obs = ObsBatch::from_sets(layout, &sets).unwrap();
    let chosen: Vec<usize> = (0..batch * n).map(|_| r.gen_range(0..layout.n_actions())).collect();
    let states: Vec<f64> = (0..batch * s_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..batch).map(|_| r.gen_range(-1.0..1.0)).collect();

    let names: Vec<String> = store.iter().map(|(name, _)| name.to_string()).collect();
    let is_frozen = |name: &str| frozen.iter().any(|p| name.starts_with(p));
    let checked: Vec<Tensor> = store
        .iter()
        .filter(|(name, _)| !is_frozen(name))
        .map(|(_, t)| t.clone())
        .collect();

    grad_check(
        |tape, vars| {
            let mut it = vars.iter();
            let bound_vars = store
                .iter()
                .zip(&names)
                .map(|((_, t), name)| {
                    if is_frozen(name) {
                        tape.leaf(&t.clone().with_requires_grad(false))
                    } else {
                        *it.next().expect("one var per checked parameter")
                    }
                })
                .collect();
            let bound = Bound::from_vars(bound_vars);
            let q = net.forward(tape, &bound, &obs, &mut Noise::Off)?;
            let q = tape.pick(q, &chosen)?;
            let q = tape.reshape(q, vec![batch, n])?;
            let st = tape.constant(vec![batch, s_dim], states.clone())?;
            let tot = mixer.forward(tape, &bound, q, st)?;
            let y = tape.constant(vec![batch], targets.clone())?;
            let d = tape.sub(tot, y)?;
            let sq = tape.mul(d, d)?;
            tape.mean_all(sq)
        },
        &checked,
    )
    .unwrap()
}

/// Forward-view λ-return: the (1−λ)λⁿ⁻¹-weighted mix of n-step returns, with
/// the tail weight on the full return. Independent of the backward recursion.
pub fn forward_view_lambda_return(rewards: &[f64], next_values: &[f64], terminated: bool, gamma: f64, lambda: f64) -> Vec<f64> {
    let t_len = rewards.len();
    let value_after = |i: usize| {
        if terminated && i == t_len - 1 {
            0.0
        } else {
            next_values[i]
        }
    };
    (0..t_len)
        .map(|t| {
            let horizon = t_len - t;
            let n_step = |n: usize| {
                let discounted: f64 = (0..n).map(|k| gamma.powi(k as i32) * rewards[t + k]).sum();
                discounted + gamma.powi(n as i32) * value_after(t + n - 1)
            };
            let mut g = 0.0;
            for n in 1..horizon {
                g += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
            }
            g + lambda.powi(horizon as i32 - 1) * n_step(horizon)
        })
        .collect()
}

/// A short random episode played on the 3v3 preset.
pub fn random_episode(seed: u64, max_steps: usize) -> permnet::marl::Episode {
    use permnet::env::MultiAgentEnv;
    use rand::seq::SliceRandom;
    let mut env = BattleEnv::new(BattleConfig::preset("3v3").unwrap()).unwrap();
    env.reset(seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let mut ep = permnet::marl::Episode {
        observations: vec![env.observations()],
        states: vec![env.state()],
        avail: vec![env.avail_actions()],
        actions: vec![],
        rewards: vec![],
        terminated: false,
        won: false,
    };
    for _ in 0..max_steps {
        let actions: Vec<usize> = env
            .avail_actions()
            .iter()
            .map(|m| *(0..m.len()).filter(|&a| m[a]).collect::<Vec<_>>().choose(&mut r).unwrap())
            .collect();
        let out = env.step(&actions).unwrap();
        ep.actions.push(actions);
        ep.rewards.push(out.reward);
        ep.observations.push(env.observations());
        ep.states.push(env.state());
        ep.avail.push(env.avail_actions());
        if out.terminal {
            ep.terminated = !out.timed_out;
            ep.won = out.won;
            break;
        }
    }
    ep
}

mod common;

use common::*;
use permnet::agent::{Architecture, NetSizes};
use permnet::env::scripted::{lookahead_policy, passive_policy};
use permnet::env::{BattleConfig, BattleEnv, MultiAgentEnv, ShuffleWrapper, Team, N_MOVE_ACTIONS, STOP};
use permnet::error::Error;
use permnet::gumbel::Noise;
use permnet::marl::{evaluate, greedy_actions};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn env(preset: &str) -> BattleEnv {
    BattleEnv::new(BattleConfig::preset(preset).unwrap()).unwrap()
}

fn random_joint<R: Rng>(env: &impl MultiAgentEnv, rng: &mut R) -> Vec<usize> {
    env.avail_actions()
        .iter()
        .map(|mask| {
            let ok: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
            *ok.choose(rng).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn health_never_increases(seed in any::<u64>(), preset in prop::sample::select(vec!["3v3", "4v5", "5v6"])) {
        let mut e = env(preset);
        e.reset(seed).unwrap();
        let mut r = rng(seed);
        loop {
            let before = e.battle_state().clone();
            let actions = random_joint(&e, &mut r);
            let attacked = actions.iter().any(|&a| a >= N_MOVE_ACTIONS);
            let out = e.step(&actions).unwrap();
            let after = e.battle_state();
            prop_assert!(after.team_health(Team::Ally) <= before.team_health(Team::Ally));
            prop_assert!(after.team_health(Team::Enemy) <= before.team_health(Team::Enemy));
            if attacked {
                prop_assert!(after.team_health(Team::Enemy) < before.team_health(Team::Enemy));
            }
            if out.terminal {
                break;
            }
        }
    }

    #[test]
    fn seed_and_action_log_replay_exactly(seed in any::<u64>()) {
        let mut e = env("3v3");
        e.reset(seed).unwrap();
        let mut r = rng(seed ^ 1);
        let mut log = Vec::new();
        let mut trace = vec![(e.state(), e.observations())];
        loop {
            let a = random_joint(&e, &mut r);
            let out = e.step(&a).unwrap();
            log.push((a, out));
            trace.push((e.state(), e.observations()));
            if out.terminal {
                break;
            }
        }
        let mut again = env("3v3");
        again.reset(seed).unwrap();
        prop_assert_eq!(&trace[0], &(again.state(), again.observations()));
        for (i, (a, out)) in log.iter().enumerate() {
            let o = again.step(a).unwrap();
            prop_assert_eq!(o, *out);
            prop_assert_eq!(&trace[i + 1], &(again.state(), again.observations()));
        }
    }

    #[test]
    fn masks_are_sound(seed in any::<u64>(), steps in 0usize..15) {
        let mut e = env("3v3");
        e.reset(seed).unwrap();
        let mut r = rng(seed);
        for _ in 0..steps {
            if e.step(&random_joint(&e, &mut r)).unwrap().terminal {
                return Ok(());
            }
        }
        let masks = e.avail_actions();
        let fallback: Vec<usize> = masks.iter().map(|m| if m[STOP] { STOP } else { 0 }).collect();
        for (agent, mask) in masks.iter().enumerate() {
            for (a, &ok) in mask.iter().enumerate() {
                let mut joint = fallback.clone();
                joint[agent] = a;
                let result = e.clone().step(&joint);
                if ok {
                    prop_assert!(result.is_ok());
                } else {
                    prop_assert_eq!(result.unwrap_err(), Error::UnavailableAction { agent, action: a });
                }
            }
        }
    }
}

#[test]
fn passive_allies_never_win() {
    let mut envs: Vec<BattleEnv> = (0..4).map(|_| env("3v3")).collect();
    let seeds: Vec<u64> = (0..32).collect();
    let win = evaluate(&mut envs, &seeds, |views| Ok(views.iter().map(|e| passive_policy(e.battle_state())).collect()))
        .unwrap();
    assert_eq!(win, 0.0);
}

#[test]
fn lookahead_planner_wins_every_small_battle() {
    let mut envs: Vec<BattleEnv> = (0..8).map(|_| env("3v3")).collect();
    let seeds: Vec<u64> = (0..32).collect();
    let win = evaluate(&mut envs, &seeds, |views| views.iter().map(|e| lookahead_policy(e)).collect()).unwrap();
    assert_eq!(win, 1.0);
}

#[test]
fn hpn_plays_identically_behind_the_shuffle_wrapper() {
    let base = env("3v3");
    let layout = base.layout();
    let (net, store) = build(Architecture::Hpn, layout, &NetSizes::default(), 5);
    let greedy = |e: &dyn MultiAgentEnv| -> Vec<usize> {
        let q: Vec<f64> = e
            .observations()
            .iter()
            .flat_map(|o| q_values(&net, &store, o, &mut Noise::Off))
            .collect();
        greedy_actions(&q, layout.n_actions(), &e.avail_actions()).unwrap()
    };
    for seed in 0..10 {
        let mut plain = base.clone();
        let mut wrapped = ShuffleWrapper::new(base.clone(), seed + 100);
        plain.reset(seed).unwrap();
        wrapped.reset(seed).unwrap();
        loop {
            let a = greedy(&plain);
            let w: Vec<usize> = greedy(&wrapped).iter().map(|&x| wrapped.unwrap_action(x)).collect();
            assert_eq!(a, w);
            let o1 = plain.step(&a).unwrap();
            let o2 = wrapped.step(&greedy(&wrapped)).unwrap();
            assert_eq!(o1, o2);
            assert_eq!(plain.battle_state(), wrapped.inner().battle_state());
            if o1.terminal {
                break;
            }
        }
    }
}

mod common;

use common::*;
use permnet::agent::Architecture;
use permnet::autodiff::{Tape, Tensor};
use permnet::gumbel::{gumbel_softmax, GumbelConfig, Noise};
use rand::Rng;

#[test]
fn straight_through_gradient_equals_soft_gradient() {
    let mut r = rng(11);
    for case in 0..50 {
        let logits: Vec<f64> = (0..5).map(|_| r.gen_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let grad = |hard: bool| {
            let mut noise_rng = rng(case);
            let mut tape = Tape::new();
            let x = tape.leaf(&Tensor::new(vec![1, 5], logits.clone()).unwrap().with_requires_grad(true));
            let cfg = GumbelConfig { tau: 0.7, hard, deterministic: false };
            let y = gumbel_softmax(&mut tape, x, &cfg, &mut Noise::On(&mut noise_rng)).unwrap();
            let w = tape.constant(vec![1, 5], weights.clone()).unwrap();
            let l = tape.mul(y, w).unwrap();
            let l = tape.sum_all(l).unwrap();
            let forward = tape.value(y).to_vec();
            (tape.backward(l).unwrap().get_or_zeros(x, 5), forward)
        };
        let (g_hard, y_hard) = grad(true);
        let (g_soft, y_soft) = grad(false);
        assert_eq!(g_hard, g_soft);
        // forward is the one-hot of the soft sample's argmax
        let best = permnet::gumbel::argmax(&y_soft);
        assert_eq!(y_hard.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(y_hard[best], 1.0);
    }
}

#[test]
fn hpn_with_qmix_passes_grad_check() {
    for seed in 0..4 {
        let err = full_model_grad_check(Architecture::Hpn, seed, &[]);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn dpn_with_qmix_passes_grad_check() {
    for seed in 0..4 {
        let err = full_model_grad_check(Architecture::Dpn, seed, &["agent.perm_"]);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn baselines_pass_grad_check() {
    for arch in [Architecture::Concat, Architecture::DeepSet, Architecture::HpnSet] {
        let err = full_model_grad_check(arch, 9, &[]);
        assert!(err < 1e-4, "{arch}: {err}");
    }
}

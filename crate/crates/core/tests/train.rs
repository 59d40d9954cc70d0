mod common;

use dkd_autograd::Graph;
use dkd_core::data::{encode_clip, ConfidenceMaps, VideoClip};
use dkd_core::nets::{Binding, BnMode};
use dkd_core::train::{forward_clip, generator_loss, lambda_update, Ablation, FitOptions, LambdaState, Trainer};
use proptest::prelude::*;

use common::toy_setup;

proptest! {
    #[test]
    fn lambda_stays_in_the_unit_interval(
        start in 0.0f64..=1.0,
        real in prop::collection::vec(0.0f64..5.0, 1..6),
        fake in prop::collection::vec(0.0f64..5.0, 1..6),
        gamma in 0.0f64..2.0,
    ) {
        let next = lambda_update(start, &real, &fake, gamma);
        prop_assert!((0.0..=1.0).contains(&next));
        let gap: f64 = real.iter().sum::<f64>() - fake.iter().sum::<f64>();
        if gap > 0.0 && start < 1.0 && gamma > 0.0 {
            prop_assert!(next > start);
        }
        if gap < 0.0 && start > 0.0 && gamma > 0.0 {
            prop_assert!(next < start);
        }
        let mut state = LambdaState::new(start);
        prop_assert_eq!(state.update(&real, &fake, gamma), next);
    }
}

/// Heatmap error of a training-mode forward, without updating anything.
fn heatmap_loss(t: &Trainer, clip: &VideoClip) -> f64 {
    let targets = encode_clip(clip, 8, t.cfg.sigma).unwrap();
    let mut g = Graph::new();
    let mut b = Binding::new(&mut g, &t.gen.net, BnMode::Train);
    let frames: Vec<_> = clip.frames.iter().map(|f| g.leaf(f.to_tensor())).collect();
    let maps = forward_clip(&t.gen, &mut g, &mut b, &frames, t.cfg.ablation).unwrap();
    let maps: Vec<_> = maps.iter().map(|v| ConfidenceMaps::from_tensor(g.value(*v), 8).unwrap()).collect();
    generator_loss(&maps, &targets).unwrap()
}

#[test]
fn without_the_discriminator_loss_d_is_zero_and_lambda_frozen() {
    let (mut cfg, clips) = toy_setup(1, 3, 1);
    cfg.ablation = Ablation::NoTat;
    let mut t = Trainer::new(cfg).unwrap();
    let disc_before = t.disc.net.params().to_vec();
    let targets = encode_clip(&clips[0], 8, t.cfg.sigma).unwrap();
    let lambda = t.lambda.value;
    let rep = t.train_clip_step(&clips[0], &targets, 1e-3).unwrap();
    assert_eq!(rep.loss_d, 0.0);
    assert_eq!(rep.counts.discriminator, 0);
    assert_eq!(t.lambda.value, lambda);
    assert_eq!(t.disc.net.params(), &disc_before[..]);
}

#[test]
fn generator_update_ignores_the_discriminator_without_it() {
    let (mut cfg, clips) = toy_setup(1, 3, 2);
    cfg.ablation = Ablation::NoTat;
    let targets = encode_clip(&clips[0], 8, cfg.sigma).unwrap();
    let mut a = Trainer::new(cfg.clone()).unwrap();
    let mut b = Trainer::new(cfg).unwrap();
    for p in b.disc.net.params_mut() {
        p.data_mut().iter_mut().for_each(|x| *x = -*x * 3.0 + 0.5);
    }
    a.train_clip_step(&clips[0], &targets, 1e-3).unwrap();
    b.train_clip_step(&clips[0], &targets, 1e-3).unwrap();
    assert_eq!(a.gen.net.params(), b.gen.net.params());
}

#[test]
fn the_adversarial_step_moves_the_discriminator() {
    let (cfg, clips) = toy_setup(1, 3, 3);
    let mut t = Trainer::new(cfg).unwrap();
    let before = t.disc.net.params().to_vec();
    let targets = encode_clip(&clips[0], 8, t.cfg.sigma).unwrap();
    let rep = t.train_clip_step(&clips[0], &targets, 1e-3).unwrap();
    assert_ne!(t.disc.net.params(), &before[..]);
    assert_eq!(rep.counts.discriminator, 4);
    assert_eq!(rep.lambda_after, t.lambda.value);
    assert!((0.0..=1.0).contains(&rep.lambda_after));
}

#[test]
fn fit_stops_at_the_step_budget() {
    let (mut cfg, clips) = toy_setup(3, 3, 4);
    cfg.max_steps = 4;
    let mut t = Trainer::new(cfg).unwrap();
    let summary = t.fit(&clips, &FitOptions::default()).unwrap();
    assert_eq!((summary.steps, t.step), (4, 4));
}

#[test]
fn loss_halves_on_a_few_clips() {
    let (mut cfg, clips) = toy_setup(4, 5, 5);
    cfg.max_steps = 200;
    cfg.total_epochs = 1000;
    let mut t = Trainer::new(cfg).unwrap();
    let first: f64 = clips.iter().map(|c| heatmap_loss(&t, c)).sum();
    t.fit(&clips, &FitOptions::default()).unwrap();
    let last: f64 = clips.iter().map(|c| heatmap_loss(&t, c)).sum();
    assert!(last <= 0.5 * first, "mse {first} -> {last}");
}

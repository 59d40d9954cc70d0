mod common;

use dkd_autograd::Graph;
use dkd_core::nets::{init_params, Binding, BnMode, Checkpoint};
use dkd_core::train::{TrainConfig, Trainer};
use dkd_core::DkdError;

use common::{rng, small_model, tensor};

#[test]
fn init_is_a_function_of_the_seed() {
    let cfg = small_model();
    let (g1, d1) = init_params(&cfg, 7).unwrap();
    let (g2, d2) = init_params(&cfg, 7).unwrap();
    let (g3, _) = init_params(&cfg, 8).unwrap();
    assert_eq!(g1.net.params(), g2.net.params());
    assert_eq!(d1.net.params(), d2.net.params());
    assert_ne!(g1.net.params(), g3.net.params());
    assert!(g1.net.is_finite() && d1.net.is_finite());
}

#[test]
fn component_outputs_have_the_documented_shapes() {
    let cfg = small_model();
    let sh = cfg.shape;
    let (gen, disc) = init_params(&cfg, 0).unwrap();
    let mut r = rng(1);
    let mut g = Graph::new();
    let mut b = Binding::new(&mut g, &gen.net, BnMode::Train);
    let frame = g.leaf(tensor(&mut r, &[1, 3, sh.height, sh.width]));
    let h = gen.initializer(&mut g, &mut b, frame).unwrap();
    assert_eq!(g.value(h).shape(), [1, sh.joints, sh.m(), sh.n()]);
    let f = gen.encode(&mut g, &mut b, frame).unwrap();
    assert_eq!(g.value(f).shape(), [1, sh.channels, sh.m(), sh.n()]);
    let kb = gen.distill(&mut g, &mut b, f, h).unwrap();
    assert_eq!(g.value(kb).shape(), [1, sh.channels, sh.kernel, sh.kernel]);
    let next = gen.match_kernels(&mut g, &mut b, f, kb).unwrap();
    assert_eq!(g.value(next).shape(), [1, sh.joints, sh.m(), sh.n()]);

    let mut bd = Binding::new(&mut g, &disc.net, BnMode::Train);
    let small = g.leaf(tensor(&mut r, &[1, 3, sh.m(), sh.n()]));
    let d = disc.forward(&mut g, &mut bd, small, h, small, next).unwrap();
    assert_eq!(g.value(d).shape(), [1, sh.joints, sh.m(), sh.n()]);
    assert!(disc.forward(&mut g, &mut bd, frame, h, small, next).is_err());
}

#[test]
fn distillator_rejects_mismatched_inputs() {
    let cfg = small_model();
    let sh = cfg.shape;
    let (gen, _) = init_params(&cfg, 0).unwrap();
    let mut r = rng(2);
    let mut g = Graph::new();
    let mut b = Binding::new(&mut g, &gen.net, BnMode::Train);
    let f = g.leaf(tensor(&mut r, &[1, sh.channels, sh.m(), sh.n()]));
    let h = g.leaf(tensor(&mut r, &[1, sh.joints, sh.m() / 2, sh.n()]));
    assert!(matches!(gen.distill(&mut g, &mut b, f, h), Err(DkdError::Shape(_))));
}

fn small_trainer() -> Trainer {
    let m = small_model();
    let mut cfg = TrainConfig::default();
    (cfg.height, cfg.width, cfg.joints, cfg.channels, cfg.kernel) = (64, 64, m.shape.joints, m.shape.channels, m.shape.kernel);
    (cfg.initializer, cfg.encoder, cfg.discriminator) = (m.initializer, m.encoder, m.discriminator);
    Trainer::new(cfg).unwrap()
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let t = small_trainer();
    t.to_checkpoint().save(&path).unwrap();
    let back = Trainer::load(&path).unwrap();
    assert_eq!(back.gen.net.params(), t.gen.net.params());
    assert_eq!(back.disc.net.params(), t.disc.net.params());
    assert_eq!(back.cfg, t.cfg);
    assert_eq!(back.to_checkpoint().to_bytes().unwrap(), t.to_checkpoint().to_bytes().unwrap());
}

#[test]
fn checkpoint_for_another_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    small_trainer().to_checkpoint().save(&path).unwrap();
    let mut other = small_model();
    other.shape.joints += 1;
    assert!(matches!(Checkpoint::load(&path, Some(&other)), Err(DkdError::ConfigHashMismatch { .. })));
    assert!(Checkpoint::load(&path, Some(&small_model())).is_ok());
    assert_ne!(small_model().hash(), other.hash());
}

#[test]
fn damaged_checkpoints_are_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    small_trainer().to_checkpoint().save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = Trainer::load(&path).err().expect("truncated file loads");
    assert!(matches!(err, DkdError::CorruptCheckpoint { .. }), "{err}");
    assert!(!err.is_validation());
}

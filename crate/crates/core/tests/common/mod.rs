#![allow(dead_code)]

use dkd_autograd::Tensor;
use dkd_core::data::{generate_dataset, DatasetConfig, VideoClip};
use dkd_core::matching::Planes;
use dkd_core::nets::{BackboneSize, ModelConfig, ShapeConfig};
use dkd_core::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn planes(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Planes<f64> {
    Planes::new(c, h, w, uniform(rng, c * h * w)).unwrap()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform(rng, n)).unwrap()
}

/// A 64×64 model small enough for gradient checks.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        shape: ShapeConfig {
            height: 64,
            width: 64,
            stride: 8,
            joints: 3,
            channels: 4,
            kernel: 3,
        },
        initializer: BackboneSize::Tiny,
        encoder: BackboneSize::Tiny,
        discriminator: BackboneSize::Tiny,
    }
}

/// Default training setup on `clips` synthetic clips of `frames` frames.
pub fn toy_setup(clips: usize, frames: usize, seed: u64) -> (TrainConfig, Vec<VideoClip>) {
    let mut cfg = TrainConfig::default();
    cfg.clip_length = frames;
    let mut data = DatasetConfig {
        clips,
        ..Default::default()
    };
    data.scene.frames = frames;
    (cfg, generate_dataset(&data, seed).unwrap())
}

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_SIGMA;
use crate::error::{DkdError, Result};
use crate::nets::{BackboneSize, ModelConfig, ShapeConfig, NETWORK_STRIDE};

/// Which parts of the model are trained and used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Kernel distillation with the temporal discriminator.
    Full,
    /// Kernel distillation without the discriminator.
    NoTat,
    /// Per-frame encoder and head, with the discriminator.
    NoPkd,
    /// Per-frame encoder and head alone.
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoTat, Ablation::NoPkd, Ablation::Baseline];

    pub fn uses_distillation(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoTat)
    }

    pub fn uses_discriminator(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoPkd)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTat => "no_tat",
            Ablation::NoPkd => "no_pkd",
            Ablation::Baseline => "baseline",
        }
    }
}

impl FromStr for Ablation {
    type Err = DkdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Ablation::Full),
            "no_tat" => Ok(Ablation::NoTat),
            "no_pkd" => Ok(Ablation::NoPkd),
            "baseline" => Ok(Ablation::Baseline),
            _ => Err(DkdError::Config(format!("unknown ablation `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the adversarial term in the generator loss.
    pub eta: f64,
    /// Rate of the λ controller.
    pub gamma: f64,
    pub learning_rate: f64,
    /// 1-indexed epochs after which the rate is multiplied by `lr_drop_factor`.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub total_epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: u64,
    pub clip_length: usize,
    pub ablation: Ablation,
    pub seed: u64,
    pub sigma: f64,
    /// Random scale/rotation per clip.
    pub augment: bool,
    /// Random mirroring when augmenting.
    pub flip: bool,
    pub height: usize,
    pub width: usize,
    pub joints: usize,
    pub channels: usize,
    pub kernel: usize,
    pub initializer: BackboneSize,
    pub encoder: BackboneSize,
    pub discriminator: BackboneSize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let shape = ShapeConfig::default();
        let model = ModelConfig::default();
        Self {
            eta: 0.1,
            gamma: 0.1,
            learning_rate: 5e-4,
            lr_drop_epochs: vec![15, 25],
            lr_drop_factor: 0.1,
            total_epochs: 40,
            max_steps: 0,
            clip_length: 5,
            ablation: Ablation::Full,
            seed: 0,
            sigma: DEFAULT_SIGMA,
            augment: false,
            flip: false,
            height: shape.height,
            width: shape.width,
            joints: shape.joints,
            channels: shape.channels,
            kernel: shape.kernel,
            initializer: model.initializer,
            encoder: model.encoder,
            discriminator: model.discriminator,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DkdError::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            shape: ShapeConfig {
                height: self.height,
                width: self.width,
                stride: NETWORK_STRIDE,
                joints: self.joints,
                channels: self.channels,
                kernel: self.kernel,
            },
            initializer: self.initializer,
            encoder: self.encoder,
            discriminator: self.discriminator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.gamma > 0.0) {
            return Err(DkdError::Config("eta and gamma must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_drop_factor > 0.0) || !(self.sigma > 0.0) {
            return Err(DkdError::Config("learning rate, drop factor and sigma must be positive".into()));
        }
        let min_t = if self.ablation == Ablation::Baseline { 1 } else { 2 };
        if self.clip_length < min_t {
            return Err(DkdError::Config(format!(
                "clip length {} too short for {} (need {min_t})",
                self.clip_length,
                self.ablation.as_str()
            )));
        }
        self.model().shape.validate()
    }

    /// Learning rate during the given 1-indexed epoch.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&d| epoch > d).count();
        self.learning_rate * self.lr_drop_factor.powi(drops as i32)
    }

    /// Sets one field from its flat-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "eta" => self.eta = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "lr_drop_epochs" => {
                self.lr_drop_epochs = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "lr_drop_factor" => self.lr_drop_factor = parse(key, v)?,
            "total_epochs" | "epochs" => self.total_epochs = parse(key, v)?,
            "max_steps" | "iterations" => self.max_steps = parse(key, v)?,
            "clip_length" | "clip_len" => self.clip_length = parse(key, v)?,
            "ablation" => self.ablation = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "augment" => self.augment = parse(key, v)?,
            "flip" => self.flip = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "joints" => self.joints = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "initializer" => self.initializer = v.parse()?,
            "encoder" | "backbone" => self.encoder = v.parse()?,
            "discriminator" => self.discriminator = v.parse()?,
            other => return Err(DkdError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DkdError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Every field in the flat format; [`TrainConfig::from_kv`] reads it back.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let drops: Vec<String> = self.lr_drop_epochs.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "lr_drop_epochs = {}", drops.join(","));
        let _ = writeln!(s, "lr_drop_factor = {}", self.lr_drop_factor);
        let _ = writeln!(s, "total_epochs = {}", self.total_epochs);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "clip_length = {}", self.clip_length);
        let _ = writeln!(s, "ablation = {}", self.ablation.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "flip = {}", self.flip);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "joints = {}", self.joints);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "kernel = {}", self.kernel);
        let _ = writeln!(s, "initializer = {}", self.initializer.as_str());
        let _ = writeln!(s, "encoder = {}", self.encoder.as_str());
        let _ = writeln!(s, "discriminator = {}", self.discriminator.as_str());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.eta = 0.25;
        cfg.lr_drop_epochs = vec![3, 7];
        cfg.ablation = Ablation::NoPkd;
        cfg.encoder = BackboneSize::Medium;
        cfg.learning_rate = 1.0 / 3.0;
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_and_bad_value_are_errors() {
        assert!(TrainConfig::from_kv("bogus = 1").is_err());
        assert!(TrainConfig::from_kv("eta = x").is_err());
        assert!(TrainConfig::from_kv("eta").is_err());
        assert_eq!(TrainConfig::from_kv("# note\n\nseed = 4 # trailing\n").unwrap().seed, 4);
    }

    #[test]
    fn schedule_drops_after_the_listed_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at_epoch(1), 5e-4);
        assert_eq!(cfg.lr_at_epoch(15), 5e-4);
        assert!((cfg.lr_at_epoch(16) - 5e-5).abs() < 1e-18);
        assert!((cfg.lr_at_epoch(26) - 5e-6).abs() < 1e-18);
    }

    #[test]
    fn short_clips_rejected_for_temporal_modes() {
        let mut cfg = TrainConfig::default();
        cfg.clip_length = 1;
        assert!(cfg.validate().is_err());
        cfg.ablation = Ablation::Baseline;
        assert!(cfg.validate().is_ok());
    }
}

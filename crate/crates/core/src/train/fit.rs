use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{StepReport, TrainConfig, Trainer};
use crate::data::{augment_clip, encode_clip, AugmentationParams, Skeleton, VideoClip};
use crate::error::{DkdError, Result};
use crate::metrics::MetricsLog;
use super::LambdaState;
use crate::nets::Checkpoint;

/// Where a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// `epoch-XXXX.ckpt` after every epoch and `last.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Step reports as JSON lines.
    pub log: Option<MetricsLog>,
    /// Stop once this many epochs are complete, below `total_epochs`.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub steps: u64,
    pub epochs: usize,
    pub first_loss_g: Option<f64>,
    pub last_loss_g: Option<f64>,
    pub lambda: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

impl Trainer {
    /// Training window for clip `index` of `epoch`: a random span of
    /// `clip_length` frames, augmented when enabled. Depends only on
    /// `(seed, epoch, index)`, so resumed runs see identical samples.
    pub fn sample_for(&self, clip: &VideoClip, epoch: usize, index: usize) -> Result<VideoClip> {
        let t = self.cfg.clip_length;
        if clip.len() < t {
            return Err(DkdError::Config(format!(
                "clip {} has {} frames, training needs {t}",
                clip.clip_id,
                clip.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, epoch as u64 + 1, index as u64 + 1));
        let start = rng.random_range(0..=clip.len() - t);
        let window = clip.window(start, t)?;
        if !self.cfg.augment {
            return Ok(window);
        }
        let pairs = Skeleton::stick_figure(clip.num_joints()).flip_pairs;
        let size = self.cfg.height.max(self.cfg.width);
        let params = AugmentationParams::sample(rng.random(), size, self.cfg.flip, pairs);
        augment_clip(&window, &params)
    }

    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, 0xE90C, epoch as u64)));
        order
    }

    /// Runs epochs from the current position until `total_epochs`, the
    /// step limit, or `stop_after_epoch`.
    pub fn fit(&mut self, dataset: &[VideoClip], opts: &FitOptions) -> Result<FitSummary> {
        if dataset.is_empty() {
            return Err(DkdError::Config("empty training set".into()));
        }
        let hash = self.cfg.model().hash();
        let mut first = None;
        let mut last = None;
        let end = opts.stop_after_epoch.map_or(self.cfg.total_epochs, |e| e.min(self.cfg.total_epochs));
        let limit_hit = |step: u64, cfg: &TrainConfig| cfg.max_steps > 0 && step >= cfg.max_steps;
        while self.epoch < end && !limit_hit(self.step, &self.cfg) {
            let epoch = self.epoch;
            let lr = self.cfg.lr_at_epoch(epoch + 1);
            let mut completed = true;
            for (pos, &i) in self.epoch_order(epoch, dataset.len()).iter().enumerate() {
                if limit_hit(self.step, &self.cfg) {
                    completed = false;
                    break;
                }
                let sample = self.sample_for(&dataset[i], epoch, pos)?;
                let targets = encode_clip(&sample, self.gen.shape().stride, self.cfg.sigma)?;
                let report: StepReport = self.train_clip_step(&sample, &targets, lr)?;
                first.get_or_insert(report.loss_g);
                last = Some(report.loss_g);
                if let Some(log) = &opts.log {
                    log.append("step", &hash, &report)?;
                }
            }
            if !completed {
                break;
            }
            self.epoch += 1;
            if let Some(dir) = &opts.checkpoint_dir {
                let ck = self.to_checkpoint();
                ck.save(&dir.join(format!("epoch-{:04}.ckpt", self.epoch)))?;
                ck.save(&dir.join("last.ckpt"))?;
            }
        }
        if let Some(dir) = &opts.checkpoint_dir {
            self.to_checkpoint().save(&dir.join("last.ckpt"))?;
        }
        Ok(FitSummary {
            steps: self.step,
            epochs: self.epoch,
            first_loss_g: first,
            last_loss_g: last,
            lambda: self.lambda.value,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.cfg.model(), self.lambda.value, self.epoch, self.step);
        ck.meta.extra = serde_json::to_value(&self.cfg).expect("plain config");
        ck.push_net("gen", &self.gen.net);
        ck.push_net("disc", &self.disc.net);
        ck.push_list("opt_g.square_avg", &self.opt_g.square_avg);
        ck.push_list("opt_d.square_avg", &self.opt_d.square_avg);
        ck
    }

    /// Rebuilds a trainer with the stored configuration and state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_value(ck.meta.extra.clone())
            .map_err(|e| DkdError::Config(format!("checkpoint lacks a training configuration: {e}")))?;
        if cfg.model().hash() != ck.meta.config_hash {
            return Err(DkdError::ConfigHashMismatch {
                expected: ck.meta.config_hash.clone(),
                found: cfg.model().hash(),
            });
        }
        let mut t = Self::new(cfg)?;
        ck.restore_net("gen", &mut t.gen.net)?;
        ck.restore_net("disc", &mut t.disc.net)?;
        ck.restore_list("opt_g.square_avg", &mut t.opt_g.square_avg)?;
        ck.restore_list("opt_d.square_avg", &mut t.opt_d.square_avg)?;
        t.lambda = LambdaState::new(ck.meta.lambda);
        t.step = ck.meta.step;
        t.epoch = ck.meta.epoch;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, None)?)
    }
}

use dkd_autograd::{Graph, RmsProp, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{Ablation, LambdaState, TrainConfig};
use crate::data::{ConfidenceMaps, VideoClip};
use crate::error::{DkdError, Result};
use crate::nets::{init_params, Binding, BnMode, CallCounts, Discriminator, Generator};

/// Telemetry of one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub eta: f64,
    /// `l2(h_t, ĥ_t)` per frame.
    pub frame_mse: Vec<f64>,
    /// `l2(d^r_t, d̂_t)` per frame pair.
    pub real_errs: Vec<f64>,
    /// `l2(d^f_t, d_t)` per frame pair.
    pub fake_errs: Vec<f64>,
    pub counts: CallCounts,
}

impl StepReport {
    /// `Σ frame_mse + η·Σ fake_errs`.
    pub fn resum_g(&self) -> f64 {
        self.frame_mse.iter().sum::<f64>() + self.eta * self.fake_errs.iter().sum::<f64>()
    }

    /// `λ·Σ fake_errs − Σ real_errs` with λ before the update.
    pub fn resum_d(&self) -> f64 {
        self.lambda_before * self.fake_errs.iter().sum::<f64>() - self.real_errs.iter().sum::<f64>()
    }
}

/// Predicted maps for every frame of a clip.
///
/// With distillation: `h_1 = P(I_1)`, then for each later frame the
/// kernels distilled from the previous features and (predicted) maps are
/// matched against the new frame's features. Without: an encoder and
/// per-frame head on every frame.
pub fn forward_clip(gen: &Generator, g: &mut Graph, b: &mut Binding, frames: &[Var], ablation: Ablation) -> Result<Vec<Var>> {
    let Some(&first) = frames.first() else {
        return Err(DkdError::Config("cannot run on an empty clip".into()));
    };
    let mut maps = Vec::with_capacity(frames.len());
    if ablation.uses_distillation() {
        let mut h = gen.initializer(g, b, first)?;
        let mut f = gen.encode(g, b, first)?;
        maps.push(h);
        for &frame in &frames[1..] {
            let kernels = gen.distill(g, b, f, h)?;
            f = gen.encode(g, b, frame)?;
            h = gen.match_kernels(g, b, f, kernels)?;
            maps.push(h);
        }
    } else {
        for &frame in frames {
            let f = gen.encode(g, b, frame)?;
            maps.push(gen.frame_head(g, b, f)?);
        }
    }
    Ok(maps)
}

fn sum(g: &mut Graph, terms: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &t in terms {
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    Ok(acc)
}

fn non_finite(what: &str, step: u64, report: &StepReport) -> DkdError {
    DkdError::NonFinite {
        what: what.into(),
        step,
        detail: format!(
            "frame mse {:?}, real {:?}, fake {:?}, lambda {}",
            report.frame_mse, report.real_errs, report.fake_errs, report.lambda_before
        ),
    }
}

/// Model, optimizer state and progress of one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    pub opt_g: RmsProp,
    pub opt_d: RmsProp,
    pub lambda: LambdaState,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (gen, disc) = init_params(&cfg.model(), cfg.seed)?;
        let opt_g = RmsProp::new(&gen.net.shapes());
        let opt_d = RmsProp::new(&disc.net.shapes());
        Ok(Self {
            cfg,
            gen,
            disc,
            opt_g,
            opt_d,
            lambda: LambdaState::default(),
            step: 0,
            epoch: 0,
        })
    }

    /// One pass of the training algorithm over `clip`: forward all frames,
    /// accumulate the generator and discriminator losses, update D by
    /// ascent and the generator by descent, then update λ.
    pub fn train_clip_step(&mut self, clip: &VideoClip, targets: &[ConfidenceMaps], lr: f64) -> Result<StepReport> {
        let t_len = clip.len();
        if t_len != self.cfg.clip_length {
            return Err(DkdError::CountMismatch {
                what: "clip frames".into(),
                expected: self.cfg.clip_length,
                found: t_len,
            });
        }
        if targets.len() != t_len {
            return Err(DkdError::CountMismatch {
                what: "target maps".into(),
                expected: t_len,
                found: targets.len(),
            });
        }
        let ablation = self.cfg.ablation;
        let tat = ablation.uses_discriminator();
        let stride = self.gen.shape().stride;
        let eta = self.cfg.eta;
        let lambda_before = self.lambda.value;

        let mut g = Graph::new();
        let mut gb = Binding::new(&mut g, &self.gen.net, BnMode::Train);
        let mut db = tat.then(|| Binding::new(&mut g, &self.disc.net, BnMode::Train));
        let frames: Vec<Var> = clip.frames.iter().map(|f| g.leaf(f.to_tensor())).collect();
        let truth: Vec<Var> = targets.iter().map(|m| g.leaf(m.to_tensor())).collect();
        let maps = forward_clip(&self.gen, &mut g, &mut gb, &frames, ablation)?;

        let mut mse = Vec::with_capacity(t_len);
        for (&h, &target) in maps.iter().zip(&truth) {
            mse.push(g.mse(h, target)?);
        }
        let (mut real, mut fake) = (Vec::new(), Vec::new());
        if let Some(db) = db.as_mut() {
            let small: Vec<Var> = clip
                .frames
                .iter()
                .map(|f| Ok(g.leaf(f.downsample_tensor(stride)?)))
                .collect::<Result<_>>()?;
            for t in 1..t_len {
                let d_real = self.disc.forward(&mut g, db, small[t - 1], truth[t - 1], small[t], truth[t])?;
                let d_hat = g.sub(truth[t], truth[t - 1])?;
                real.push(g.mse(d_real, d_hat)?);
                let d_fake = self.disc.forward(&mut g, db, small[t - 1], maps[t - 1], small[t], maps[t])?;
                let d = g.sub(maps[t], maps[t - 1])?;
                fake.push(g.mse(d_fake, d)?);
            }
        }

        let mse_sum = sum(&mut g, &mse)?.expect("at least one frame");
        let (loss_g, loss_d) = match (sum(&mut g, &real)?, sum(&mut g, &fake)?) {
            (Some(r), Some(f)) => {
                let adv = g.scale(f, eta);
                let lg = g.add(mse_sum, adv)?;
                let lf = g.scale(f, lambda_before);
                (lg, Some(g.sub(lf, r)?))
            }
            _ => (mse_sum, None),
        };

        let vals = |vs: &[Var]| vs.iter().map(|v| g.value(*v).item()).collect::<Vec<f64>>();
        let mut counts = gb.counts;
        if let Some(db) = &db {
            counts.discriminator = db.counts.discriminator;
        }
        let mut report = StepReport {
            step: self.step + 1,
            epoch: self.epoch + 1,
            learning_rate: lr,
            loss_g: g.value(loss_g).item(),
            loss_d: loss_d.map_or(0.0, |l| g.value(l).item()),
            lambda_before,
            lambda_after: lambda_before,
            eta,
            frame_mse: vals(&mse),
            real_errs: vals(&real),
            fake_errs: vals(&fake),
            counts,
        };
        if !report.loss_g.is_finite() {
            return Err(non_finite("generator loss", report.step, &report));
        }
        if !report.loss_d.is_finite() {
            return Err(non_finite("discriminator loss", report.step, &report));
        }

        let grads_g = g.backward(loss_g, gb.vars())?;
        let grads_d = match (&db, loss_d) {
            (Some(db), Some(l)) => Some(g.backward(l, db.vars())?),
            _ => None,
        };
        if !grads_g.iter().chain(grads_d.iter().flatten()).all(Tensor::is_finite) {
            return Err(non_finite("gradient", report.step, &report));
        }
        let stats_g = gb.take_batch_stats();
        let stats_d = db.as_mut().map(|b| b.take_batch_stats());
        drop(gb);
        drop(db);

        if let (Some(grads), Some(stats)) = (grads_d, stats_d) {
            let mut params: Vec<&mut Tensor> = self.disc.net.params_mut().iter_mut().collect();
            self.opt_d.step(&mut params, &grads, lr, true);
            self.disc.net.apply_batch_stats(&stats);
        }
        {
            let mut params: Vec<&mut Tensor> = self.gen.net.params_mut().iter_mut().collect();
            self.opt_g.step(&mut params, &grads_g, lr, false);
        }
        self.gen.net.apply_batch_stats(&stats_g);
        if tat {
            report.lambda_after = self.lambda.update(&report.real_errs, &report.fake_errs, self.cfg.gamma);
        }
        self.step += 1;
        Ok(report)
    }
}

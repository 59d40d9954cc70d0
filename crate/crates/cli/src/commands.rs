use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dkd_core::data::{generate_dataset, load_clip, load_dataset, save_dataset, DatasetConfig, SyntheticSceneConfig, VideoClip};
use dkd_core::infer::{evaluate, overlay_render, run_for, video_macs};
use dkd_core::metrics::{flops_report, matching_macs, MetricConfig, MetricsLog, PckReport, Reference};
use dkd_core::nets::{init_params, Generator};
use dkd_core::train::{Ablation, FitOptions, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::settings::{self, Ablate, Eval, Flops, GenData, Infer, Settings, Train};

type Result<T> = std::result::Result<T, dkd_core::DkdError>;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn write_snapshot<S: Settings>(out: &Path, s: &S) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved"), settings::snapshot(s))?;
    Ok(())
}

pub fn gen_data(s: &GenData, out: &Path) -> Result<()> {
    let mut scene = SyntheticSceneConfig::with_joints(s.joints);
    scene.frames = s.frames;
    scene.height = s.height;
    scene.width = s.width;
    scene.distractor_enabled = s.distractors;
    let cfg = DatasetConfig {
        clips: s.clips,
        scene,
        occlusion_probability: s.occlusion_probability,
    };
    let clips = generate_dataset(&cfg, s.seed)?;
    save_dataset(&clips, out)?;
    println!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

fn fit(cfg: TrainConfig, clips: &[VideoClip], out: &Path) -> Result<Trainer> {
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    let opts = FitOptions {
        checkpoint_dir: Some(ckpt),
        log: Some(MetricsLog::new(out.join("train_log.jsonl"))),
        stop_after_epoch: None,
    };
    let mut trainer = Trainer::new(cfg)?;
    let summary = trainer.fit(clips, &opts)?;
    println!(
        "{}: {} steps, {} epochs, loss_g {:?} -> {:?}, lambda {:.4}",
        trainer.cfg.ablation.as_str(),
        summary.steps,
        summary.epochs,
        summary.first_loss_g,
        summary.last_loss_g,
        summary.lambda
    );
    Ok(trainer)
}

pub fn train(s: &Train, out: &Path) -> Result<()> {
    let clips = load_dataset(s.dataset()?)?;
    fit(s.train.clone(), &clips, out)?;
    Ok(())
}

/// `eval.json`: PCK under both normalizations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub ablation: Ablation,
    pub alpha: f64,
    pub clips: usize,
    pub person: PckReport,
    pub torso: PckReport,
}

fn eval_both(gen: &Generator, clips: &[VideoClip], ablation: Ablation, alpha: f64) -> Result<EvalOutput> {
    let score = |reference| evaluate(gen, clips, ablation, MetricConfig { alpha, reference });
    Ok(EvalOutput {
        ablation,
        alpha,
        clips: clips.len(),
        person: score(Reference::PersonSize)?,
        torso: score(Reference::TorsoSize)?,
    })
}

pub fn eval(s: &Eval, out: &Path) -> Result<()> {
    let trainer = Trainer::load(s.checkpoint()?)?;
    let clips = load_dataset(s.dataset()?)?;
    let ablation = s.ablation.unwrap_or(trainer.cfg.ablation);
    let result = eval_both(&trainer.gen, &clips, ablation, s.alpha)?;
    write_json(&out.join("eval.json"), &result)?;
    let headline = match s.reference {
        Reference::PersonSize => &result.person,
        Reference::TorsoSize => &result.torso,
    };
    println!(
        "PCK@{} ({}) = {:.4} over {} joints",
        s.alpha,
        settings::reference_name(s.reference),
        headline.mean,
        headline.counted
    );
    Ok(())
}

pub fn infer(s: &Infer, out: &Path) -> Result<()> {
    let trainer = Trainer::load(s.checkpoint()?)?;
    let clip = load_clip(s.clip()?)?;
    let ablation = s.ablation.unwrap_or(trainer.cfg.ablation);
    let result = run_for(&trainer.gen, &clip.frames, ablation)?;
    fs::create_dir_all(out)?;
    let mut doc = result.to_json();
    doc["clip_id"] = json!(clip.clip_id);
    doc["ablation"] = json!(ablation.as_str());
    write_json(&out.join("result.json"), &doc)?;
    if s.overlay {
        let written = overlay_render(&result, &clip, &out.join("overlay"))?;
        println!("wrote {} overlay frames", written.len());
    }
    println!("inferred {} frames of {}", result.len(), clip.clip_id);
    Ok(())
}

pub fn flops(s: &Flops, out: &Path) -> Result<()> {
    let model = s.train.model();
    let (gen, disc) = init_params(&model, s.train.seed)?;
    let sh = model.shape;
    let specs = [
        gen.initializer_spec(),
        gen.encoder_spec(),
        gen.distillator_spec(),
        gen.matching_spec(),
        gen.frame_head_spec(),
        disc.spec(),
    ];
    let report = flops_report(&specs, Some(matching_macs(sh.m(), sh.n(), sh.channels, sh.joints, sh.kernel)))?;
    let t = s.train.clip_length;
    let per_video: BTreeMap<&str, u64> = Ablation::ALL
        .iter()
        .map(|&a| Ok((a.as_str(), video_macs(&gen, t, a)?)))
        .collect::<Result<_>>()?;
    write_json(
        &out.join("flops.json"),
        &json!({ "report": report, "video_frames": t, "per_video": per_video }),
    )?;
    for (name, macs) in &report.per_component {
        println!("{name:>14}: {macs}");
    }
    if let Some(m) = report.matching {
        println!("matching factorized {} vs full-kernel {}", m.factorized, m.full_kernel);
    }
    Ok(())
}

/// One row of the ablation summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub macs_per_frame: f64,
    pub per_seed_mean: Vec<f64>,
    pub per_joint: Vec<Option<f64>>,
    pub mean: f64,
    pub torso_mean: f64,
}

fn average(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-ablation averages over the seeds' `eval.json` outputs.
pub fn summarize(runs: &[(Ablation, Vec<EvalOutput>)], macs: &BTreeMap<Ablation, f64>) -> Vec<AblationRow> {
    runs.iter()
        .map(|(a, evals)| {
            let k = evals.first().map_or(0, |e| e.person.per_joint.len());
            let per_joint = (0..k)
                .map(|j| {
                    let vals: Vec<f64> = evals.iter().filter_map(|e| e.person.per_joint[j]).collect();
                    (!vals.is_empty()).then(|| average(vals.into_iter()))
                })
                .collect();
            AblationRow {
                ablation: *a,
                macs_per_frame: macs.get(a).copied().unwrap_or(0.0),
                per_seed_mean: evals.iter().map(|e| e.person.mean).collect(),
                per_joint,
                mean: average(evals.iter().map(|e| e.person.mean)),
                torso_mean: average(evals.iter().map(|e| e.torso.mean)),
            }
        })
        .collect()
}

pub fn ablate(s: &Ablate, out: &Path) -> Result<()> {
    let train = load_dataset(s.dataset()?)?;
    let test = load_dataset(s.test_dataset()?)?;
    let mut runs = Vec::new();
    let mut macs = BTreeMap::new();
    for &ablation in &s.ablations {
        let mut evals = Vec::new();
        for &seed in &s.seeds {
            let mut cfg = s.train.clone();
            cfg.ablation = ablation;
            cfg.seed = seed;
            let dir = out.join(format!("{}-seed{seed}", ablation.as_str()));
            let trainer = fit(cfg, &train, &dir)?;
            let t = trainer.cfg.clip_length;
            macs.insert(ablation, video_macs(&trainer.gen, t, ablation)? as f64 / t as f64);
            let result = eval_both(&trainer.gen, &test, ablation, s.alpha)?;
            write_json(&dir.join("eval.json"), &result)?;
            evals.push(result);
        }
        runs.push((ablation, evals));
    }
    let rows = summarize(&runs, &macs);
    write_json(&out.join("summary.json"), &rows)?;
    println!("{:<10} {:>14} {:>8} {:>8}", "model", "MACs/frame", "PCK", "torso");
    for r in &rows {
        println!("{:<10} {:>14.0} {:>8.4} {:>8.4}", r.ablation.as_str(), r.macs_per_frame, r.mean, r.torso_mean);
    }
    Ok(())
}

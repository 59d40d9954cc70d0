//! Discriminator-free sequential inference, per-frame runs, scoring and
//! overlay rendering.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dkd_autograd::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{decode_with_confidence, joint_color, save_frame_png, Canvas, ConfidenceMaps, Frame, Skeleton, VideoClip};
use crate::error::{DkdError, Result};
use crate::metrics::{MetricConfig, PckAccumulator, PckReport};
use crate::nets::{Binding, BnMode, CallCounts, Generator};
use crate::train::Ablation;

/// Wall-clock milliseconds spent per component over a whole video.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub initializer_ms: f64,
    pub encoder_ms: f64,
    pub distillator_ms: f64,
    pub matching_ms: f64,
    pub head_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub joints: Vec<Vec<[f64; 2]>>,
    pub confidences: Vec<Vec<f64>>,
    pub maps: Vec<ConfidenceMaps>,
    pub timing: StageTiming,
    pub counts: CallCounts,
}

#[derive(Serialize)]
struct FrameExport<'a> {
    frame: usize,
    joints: &'a [[f64; 2]],
    confidence: &'a [f64],
}

#[derive(Serialize)]
struct ResultExport<'a> {
    frames: Vec<FrameExport<'a>>,
    timing: StageTiming,
    counts: CallCounts,
}

impl InferenceResult {
    fn with_capacity(t: usize) -> Self {
        Self {
            joints: Vec::with_capacity(t),
            confidences: Vec::with_capacity(t),
            maps: Vec::with_capacity(t),
            timing: StageTiming::default(),
            counts: CallCounts::default(),
        }
    }

    fn push(&mut self, maps: ConfidenceMaps) {
        let (joints, conf): (Vec<_>, Vec<_>) = decode_with_confidence(&maps).into_iter().unzip();
        self.joints.push(joints);
        self.confidences.push(conf);
        self.maps.push(maps);
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Per-frame joints and peak confidences, plus timing.
    pub fn to_json(&self) -> serde_json::Value {
        let export = ResultExport {
            frames: self
                .joints
                .iter()
                .zip(&self.confidences)
                .enumerate()
                .map(|(frame, (j, c))| FrameExport {
                    frame,
                    joints: j,
                    confidence: c,
                })
                .collect(),
            timing: self.timing,
            counts: self.counts,
        };
        serde_json::to_value(export).expect("plain data")
    }
}

fn check_frames(gen: &Generator, frames: &[Frame]) -> Result<()> {
    if frames.is_empty() {
        return Err(DkdError::Config("inference needs at least one frame".into()));
    }
    let sh = gen.shape();
    for (t, f) in frames.iter().enumerate() {
        if (f.height(), f.width()) != (sh.height, sh.width) {
            return Err(DkdError::Shape(format!(
                "frame {t} is {}x{}, the model expects {}x{}",
                f.height(),
                f.width(),
                sh.height,
                sh.width
            )));
        }
    }
    Ok(())
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Sequential inference: `P` on the first frame, then distil kernels from
/// the previous features and maps and match them on each new frame.
///
/// Every frame gets a fresh graph; only the previous features and maps are
/// carried, so per-frame cost does not grow with the video length. A
/// single-frame video runs `P` alone.
pub fn run_video(gen: &Generator, frames: &[Frame]) -> Result<InferenceResult> {
    check_frames(gen, frames)?;
    let stride = gen.shape().stride;
    let mut out = InferenceResult::with_capacity(frames.len());
    let mut carried: Option<(Tensor, Tensor)> = None;
    for frame in frames {
        let mut g = Graph::inference();
        let mut b = Binding::new(&mut g, &gen.net, BnMode::Eval);
        let x = g.leaf(frame.to_tensor());
        let (f, h) = match carried.take() {
            None => {
                let t0 = Instant::now();
                let h = gen.initializer(&mut g, &mut b, x)?;
                out.timing.initializer_ms += ms(t0);
                if frames.len() == 1 {
                    // Nothing to distil for: P alone.
                    let counts = b.counts;
                    drop(b);
                    add_counts(&mut out.counts, &counts);
                    out.push(ConfidenceMaps::from_tensor(g.value(h), stride)?);
                    return Ok(out);
                }
                let t0 = Instant::now();
                let f = gen.encode(&mut g, &mut b, x)?;
                out.timing.encoder_ms += ms(t0);
                (f, h)
            }
            Some((f_prev, h_prev)) => {
                let (fv, hv) = (g.leaf(f_prev), g.leaf(h_prev));
                let t0 = Instant::now();
                let kernels = gen.distill(&mut g, &mut b, fv, hv)?;
                out.timing.distillator_ms += ms(t0);
                let t0 = Instant::now();
                let f = gen.encode(&mut g, &mut b, x)?;
                out.timing.encoder_ms += ms(t0);
                let t0 = Instant::now();
                let h = gen.match_kernels(&mut g, &mut b, f, kernels)?;
                out.timing.matching_ms += ms(t0);
                (f, h)
            }
        };
        let counts = b.counts;
        drop(b);
        add_counts(&mut out.counts, &counts);
        out.push(ConfidenceMaps::from_tensor(g.value(h), stride)?);
        carried = Some((g.value(f).clone(), g.value(h).clone()));
    }
    Ok(out)
}

fn add_counts(total: &mut CallCounts, c: &CallCounts) {
    total.initializer += c.initializer;
    total.encoder += c.encoder;
    total.distillator += c.distillator;
    total.matching += c.matching;
    total.frame_head += c.frame_head;
    total.discriminator += c.discriminator;
}

#[derive(Clone, Copy)]
enum PerFrame {
    Head,
    Initializer,
}

fn per_frame(gen: &Generator, frames: &[Frame], kind: PerFrame) -> Result<InferenceResult> {
    check_frames(gen, frames)?;
    let stride = gen.shape().stride;
    let mut out = InferenceResult::with_capacity(frames.len());
    for frame in frames {
        let mut g = Graph::inference();
        let mut b = Binding::new(&mut g, &gen.net, BnMode::Eval);
        let x = g.leaf(frame.to_tensor());
        let h = match kind {
            PerFrame::Head => {
                let t0 = Instant::now();
                let f = gen.encode(&mut g, &mut b, x)?;
                out.timing.encoder_ms += ms(t0);
                let t0 = Instant::now();
                let h = gen.frame_head(&mut g, &mut b, f)?;
                out.timing.head_ms += ms(t0);
                h
            }
            PerFrame::Initializer => {
                let t0 = Instant::now();
                let h = gen.initializer(&mut g, &mut b, x)?;
                out.timing.initializer_ms += ms(t0);
                h
            }
        };
        let counts = b.counts;
        drop(b);
        add_counts(&mut out.counts, &counts);
        out.push(ConfidenceMaps::from_tensor(g.value(h), stride)?);
    }
    Ok(out)
}

/// Single-frame model: encoder and per-frame head on every frame.
pub fn baseline_run(gen: &Generator, frames: &[Frame]) -> Result<InferenceResult> {
    per_frame(gen, frames, PerFrame::Head)
}

/// The initializer alone on every frame.
pub fn initializer_run(gen: &Generator, frames: &[Frame]) -> Result<InferenceResult> {
    per_frame(gen, frames, PerFrame::Initializer)
}

/// The inference path matching how `ablation` was trained.
pub fn run_for(gen: &Generator, frames: &[Frame], ablation: Ablation) -> Result<InferenceResult> {
    if ablation.uses_distillation() {
        run_video(gen, frames)
    } else {
        baseline_run(gen, frames)
    }
}

/// PCK over all frames of all clips.
pub fn evaluate(gen: &Generator, clips: &[VideoClip], ablation: Ablation, metric: MetricConfig) -> Result<PckReport> {
    let mut acc = PckAccumulator::new(metric)?;
    for clip in clips {
        let res = run_for(gen, &clip.frames, ablation)?;
        acc.add(&res.joints, &clip.annotations)?;
    }
    acc.report()
}

/// Draws predicted skeletons over the clip's frames into
/// `out_dir/%06d.png`, one file per result frame.
pub fn overlay_render(result: &InferenceResult, clip: &VideoClip, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if result.len() > clip.len() {
        return Err(DkdError::CountMismatch {
            what: "clip frames for overlay".into(),
            expected: result.len(),
            found: clip.len(),
        });
    }
    if result.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(result.len());
    for (t, joints) in result.joints.iter().enumerate() {
        let k = joints.len();
        let skeleton = Skeleton::stick_figure(k);
        let mut canvas = Canvas {
            frame: clip.frames[t].clone(),
        };
        for (j, parent) in skeleton.parents.iter().enumerate() {
            if let Some(p) = parent {
                canvas.segment(joints[*p], joints[j], 0.75, [1.0, 1.0, 1.0]);
            }
        }
        for (j, c) in joints.iter().enumerate() {
            canvas.disk(*c, 3.0, joint_color(j, k));
        }
        let path = out_dir.join(format!("{t:06}.png"));
        save_frame_png(&canvas.frame, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Multiply-adds of one pass over `frames` frames on the path `ablation`
/// uses at inference.
pub fn video_macs(gen: &Generator, frames: usize, ablation: Ablation) -> Result<u64> {
    let t = frames as u64;
    if t == 0 {
        return Ok(0);
    }
    if t == 1 && ablation.uses_distillation() {
        return gen.initializer_spec().macs();
    }
    let encoder = gen.encoder_spec().macs()?;
    if ablation.uses_distillation() {
        let step = gen.distillator_spec().macs()? + gen.matching_spec().macs()?;
        Ok(gen.initializer_spec().macs()? + t * encoder + (t - 1) * step)
    } else {
        Ok(t * (encoder + gen.frame_head_spec().macs()?))
    }
}

//! Synthetic articulated-figure videos.
//!
//! A figure is a tree of joints rooted at joint 0. Each joint is drawn as a
//! disk in its own colour, bones as light line segments. The root drifts
//! across the frame and bone angles oscillate, so every clip is a smooth
//! motion sequence with exact joint coordinates.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, JointAnnotation, VideoClip};
use crate::error::{DkdError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    /// `parents[0]` is `None`; every other joint's parent has a smaller index.
    pub parents: Vec<Option<usize>>,
    /// Rest direction of the bone ending at each joint, degrees, y downward.
    pub rest_angles_deg: Vec<f64>,
    pub torso_pair: (usize, usize),
    /// Left/right joint pairs swapped by horizontal flips.
    pub flip_pairs: Vec<(usize, usize)>,
}

impl Skeleton {
    /// A stick figure: root at the neck, then pelvis, left hand, right hand
    /// and head hanging off it. Joints past the first five extend those
    /// limbs outward, so any `k ≥ 2` gives a plausible tree.
    pub fn stick_figure(k: usize) -> Self {
        let mut parents = vec![None];
        let mut rest = vec![0.0];
        let limb_angles = [90.0, 145.0, 35.0, -90.0];
        for j in 1..k {
            parents.push(Some(if j <= 4 { 0 } else { j - 4 }));
            rest.push(limb_angles[(j - 1) % 4]);
        }
        let mut flip_pairs = Vec::new();
        let mut left = 2;
        while left + 1 < k {
            flip_pairs.push((left, left + 1));
            left += 4;
        }
        Self {
            parents,
            rest_angles_deg: rest,
            torso_pair: (0, 1.min(k.saturating_sub(1))),
            flip_pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Permutation `p` with joint `j` of a mirrored figure taking joint `p[j]`.
    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.len()).collect();
        for &(a, b) in &self.flip_pairs {
            perm.swap(a, b);
        }
        perm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub angle_amplitude_deg: f64,
    /// Oscillation frequency in cycles per frame.
    pub angle_frequency: f64,
    /// Root translation speed in pixels per frame.
    pub drift_speed: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            angle_amplitude_deg: 25.0,
            angle_frequency: 0.08,
            drift_speed: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub joint: usize,
    pub start: usize,
    pub duration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub joints: usize,
    pub skeleton: Skeleton,
    /// Length of the bone ending at joint `j + 1`, pixels.
    pub bone_lengths: Vec<f64>,
    pub motion: MotionParams,
    pub distractor_enabled: bool,
    pub occluder: Option<Occluder>,
    /// Amplitude of per-pixel uniform background noise.
    pub background_noise: f64,
    pub joint_radius: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self::with_joints(5)
    }
}

const SCALE_JITTER: (f64, f64) = (0.85, 1.15);
const DISTRACTORS: usize = 2;

impl SyntheticSceneConfig {
    pub fn with_joints(k: usize) -> Self {
        let skeleton = Skeleton::stick_figure(k);
        let bone_lengths = (1..k)
            .map(|j| match (j - 1) % 4 {
                0 => 28.0,
                3 => 14.0,
                _ => 24.0,
            } * if j > 4 { 0.6 } else { 1.0 })
            .collect();
        Self {
            joints: k,
            skeleton,
            bone_lengths,
            motion: MotionParams::default(),
            distractor_enabled: false,
            occluder: None,
            background_noise: 0.1,
            joint_radius: 4.0,
            frames: 5,
            height: 128,
            width: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.joints;
        if self.frames < 1 {
            return Err(DkdError::Config("a clip needs at least one frame".into()));
        }
        if k < 2 || self.skeleton.len() != k || self.skeleton.rest_angles_deg.len() != k {
            return Err(DkdError::Config(format!("skeleton does not describe {k} joints")));
        }
        if self.skeleton.parents[0].is_some()
            || self.skeleton.parents.iter().enumerate().skip(1).any(|(j, p)| !matches!(p, Some(p) if *p < j))
        {
            return Err(DkdError::Config("joint 0 must be the root and parents must precede children".into()));
        }
        if self.bone_lengths.len() != k - 1 || self.bone_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(DkdError::Config(format!("need {} positive bone lengths", k - 1)));
        }
        if let Some(o) = self.occluder {
            if o.joint >= k || o.duration >= self.frames || o.duration == 0 {
                return Err(DkdError::Config(format!("occluder {o:?} invalid for {} frames", self.frames)));
            }
        }
        if self.joint_radius <= 0.0 || self.background_noise < 0.0 {
            return Err(DkdError::Config("radius must be positive and noise non-negative".into()));
        }
        if 2.0 * self.reach(SCALE_JITTER.1) + 2.0 > self.height.min(self.width) as f64 {
            return Err(DkdError::Config(format!(
                "figure of reach {:.1}px does not fit a {}x{} frame",
                self.reach(SCALE_JITTER.1),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// Largest distance from the root to any disk edge at body scale `scale`.
    fn reach(&self, scale: f64) -> f64 {
        let mut depth = vec![0.0; self.joints];
        for j in 1..self.joints {
            let p = self.skeleton.parents[j].unwrap_or(0);
            depth[j] = depth[p] + self.bone_lengths[j - 1] * scale;
        }
        depth.iter().cloned().fold(0.0, f64::max) + self.joint_radius
    }
}

/// Distinct, saturated colour per joint.
pub fn joint_color(j: usize, k: usize) -> [f32; 3] {
    let h = (j as f64 / k.max(1) as f64) * 6.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let rgb = match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    };
    rgb.map(|v| v as f32)
}

pub(crate) struct Canvas {
    pub frame: Frame,
}

impl Canvas {
    pub fn disk(&mut self, center: [f64; 2], radius: f64, rgb: [f32; 3]) {
        let (h, w) = (self.frame.height(), self.frame.width());
        let r0 = (center[1] - radius).floor().max(0.0) as usize;
        let r1 = ((center[1] + radius).ceil() as usize).min(h);
        let c0 = (center[0] - radius).floor().max(0.0) as usize;
        let c1 = ((center[0] + radius).ceil() as usize).min(w);
        for row in r0..r1 {
            for col in c0..c1 {
                let dx = col as f64 + 0.5 - center[0];
                let dy = row as f64 + 0.5 - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    self.frame.set(row, col, rgb);
                }
            }
        }
    }

    pub fn segment(&mut self, a: [f64; 2], b: [f64; 2], half_width: f64, rgb: [f32; 3]) {
        let (h, w) = (self.frame.height(), self.frame.width());
        let r0 = (a[1].min(b[1]) - half_width).floor().max(0.0) as usize;
        let r1 = ((a[1].max(b[1]) + half_width).ceil() as usize).min(h);
        let c0 = (a[0].min(b[0]) - half_width).floor().max(0.0) as usize;
        let c1 = ((a[0].max(b[0]) + half_width).ceil() as usize).min(w);
        let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = (vx * vx + vy * vy).max(1e-12);
        for row in r0..r1 {
            for col in c0..c1 {
                let (px, py) = (col as f64 + 0.5 - a[0], row as f64 + 0.5 - a[1]);
                let t = ((px * vx + py * vy) / len2).clamp(0.0, 1.0);
                let (dx, dy) = (px - t * vx, py - t * vy);
                if dx * dx + dy * dy <= half_width * half_width {
                    self.frame.set(row, col, rgb);
                }
            }
        }
    }

    fn rect(&mut self, rect: [f64; 4], rgb: [f32; 3]) {
        let (h, w) = (self.frame.height(), self.frame.width());
        let r0 = rect[1].floor().max(0.0) as usize;
        let r1 = (rect[3].ceil().max(0.0) as usize).min(h);
        let c0 = rect[0].floor().max(0.0) as usize;
        let c1 = (rect[2].ceil().max(0.0) as usize).min(w);
        for row in r0..r1 {
            for col in c0..c1 {
                // Hatched so the occluder is not a flat colour the network can key on.
                let shade = if (row + col) % 6 < 3 { 0.45 } else { 0.6 };
                self.frame.set(row, col, [rgb[0] * shade, rgb[1] * shade, rgb[2] * shade]);
            }
        }
    }
}

/// Bouncing position inside `[lo, hi]` on each axis.
fn bounce(start: f64, velocity: f64, t: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return (lo + hi) / 2.0;
    }
    let span = hi - lo;
    let p = (start - lo + velocity * t).rem_euclid(2.0 * span);
    lo + if p > span { 2.0 * span - p } else { p }
}

/// Renders one clip; a pure function of `(config, seed)`.
pub fn generate_synthetic_clip(config: &SyntheticSceneConfig, seed: u64) -> Result<VideoClip> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.joints;
    let (h, w) = (config.height as f64, config.width as f64);
    let scale = rng.random_range(SCALE_JITTER.0..SCALE_JITTER.1);
    let tilt = rng.random_range(-15.0..15.0f64);
    let m = &config.motion;
    let phases: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let amps: Vec<f64> = (0..k).map(|_| m.angle_amplitude_deg * rng.random_range(0.5..1.0)).collect();
    let freqs: Vec<f64> = (0..k).map(|_| m.angle_frequency * rng.random_range(0.5..1.5)).collect();
    let margin = config.reach(scale) + 1.0;
    let start = [rng.random_range(margin..=w - margin), rng.random_range(margin..=h - margin)];
    let heading = rng.random_range(0.0..2.0 * PI);
    let vel = [m.drift_speed * heading.cos(), m.drift_speed * heading.sin()];
    let base_rgb: [f32; 3] = {
        let g = rng.random_range(0.15..0.4f32);
        [g + rng.random_range(-0.05..0.05), g, g + rng.random_range(-0.05..0.05)]
    };
    let distractors: Vec<([f64; 2], [f64; 2], usize)> = if config.distractor_enabled {
        (0..DISTRACTORS)
            .map(|_| {
                let p = [rng.random_range(margin..=w - margin), rng.random_range(margin..=h - margin)];
                let a = rng.random_range(0.0..2.0 * PI);
                (p, [1.5 * a.cos(), 1.5 * a.sin()], rng.random_range(0..k))
            })
            .collect()
    } else {
        Vec::new()
    };
    let bone_rgb = [0.85f32, 0.85, 0.8];
    let r = config.joint_radius;
    let occ_half = r + 3.0;

    let mut frames = Vec::with_capacity(config.frames);
    let mut annotations = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let tf = t as f64;
        let root = [bounce(start[0], vel[0], tf, margin, w - margin), bounce(start[1], vel[1], tf, margin, h - margin)];
        let mut coords = vec![root; k];
        for j in 1..k {
            let p = config.skeleton.parents[j].unwrap_or(0);
            let theta = (config.skeleton.rest_angles_deg[j] + tilt + amps[j] * (2.0 * PI * freqs[j] * tf + phases[j]).sin())
                .to_radians();
            let len = config.bone_lengths[j - 1] * scale;
            coords[j] = [coords[p][0] + len * theta.cos(), coords[p][1] + len * theta.sin()];
        }

        let noise = config.background_noise as f32;
        let pixels = (0..config.height * config.width)
            .flat_map(|_| {
                let n = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
                base_rgb.map(|c| (c + n).clamp(0.0, 1.0))
            })
            .collect();
        let mut canvas = Canvas {
            frame: Frame::new(config.height, config.width, pixels)?,
        };
        for (p, v, j) in &distractors {
            let at = [bounce(p[0], v[0], tf, margin, w - margin), bounce(p[1], v[1], tf, margin, h - margin)];
            canvas.disk(at, r, joint_color(*j, k));
        }
        for j in 1..k {
            let p = config.skeleton.parents[j].unwrap_or(0);
            canvas.segment(coords[p], coords[j], 1.0, bone_rgb);
        }
        for (j, c) in coords.iter().enumerate() {
            canvas.disk(*c, r, joint_color(j, k));
        }
        let mut visible = vec![true; k];
        if let Some(o) = config.occluder {
            if (o.start..o.start + o.duration).contains(&t) {
                let c = coords[o.joint];
                let rect = [c[0] - occ_half, c[1] - occ_half, c[0] + occ_half, c[1] + occ_half];
                canvas.rect(rect, [0.9, 0.9, 0.9]);
                for (j, cj) in coords.iter().enumerate() {
                    if cj[0] >= rect[0] && cj[0] <= rect[2] && cj[1] >= rect[1] && cj[1] <= rect[3] {
                        visible[j] = false;
                    }
                }
            }
        }
        let person_bbox = bbox_of(&coords, &visible, r, w, h);
        frames.push(canvas.frame);
        annotations.push(JointAnnotation {
            coords,
            visible,
            person_bbox,
            torso_pair: config.skeleton.torso_pair,
        });
    }
    VideoClip::new(format!("synth-{seed:016x}"), frames, annotations)
}

/// Box around the visible joints (all joints if none are visible), grown
/// by the disk radius and clipped to the frame.
pub(crate) fn bbox_of(coords: &[[f64; 2]], visible: &[bool], pad: f64, w: f64, h: f64) -> [f64; 4] {
    let any = visible.iter().any(|v| *v);
    let pts = coords.iter().zip(visible).filter(|(_, v)| **v || !any).map(|(c, _)| c);
    let mut b = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
    for c in pts {
        b = [b[0].min(c[0]), b[1].min(c[1]), b[2].max(c[0]), b[3].max(c[1])];
    }
    [(b[0] - pad).max(0.0), (b[1] - pad).max(0.0), (b[2] + pad).min(w), (b[3] + pad).min(h)]
}

/// A family of clips drawn from one scene template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub clips: usize,
    pub scene: SyntheticSceneConfig,
    /// Chance that a clip gets an occluder on a random joint.
    pub occlusion_probability: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            clips: 64,
            scene: SyntheticSceneConfig::default(),
            occlusion_probability: 0.0,
        }
    }
}

impl DatasetConfig {
    /// Occluders on most clips plus same-coloured distractor disks.
    pub fn occlusion_heavy(clips: usize) -> Self {
        let mut scene = SyntheticSceneConfig::default();
        scene.distractor_enabled = true;
        Self {
            clips,
            scene,
            occlusion_probability: 0.8,
        }
    }
}

/// `clips` clips; clip `i` depends only on `(config, seed, i)`.
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<Vec<VideoClip>> {
    if !(0.0..=1.0).contains(&config.occlusion_probability) {
        return Err(DkdError::Config("occlusion probability must lie in [0, 1]".into()));
    }
    (0..config.clips)
        .map(|i| {
            let clip_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(clip_seed ^ 0x5EED);
            let mut scene = config.scene.clone();
            if scene.frames >= 2 && rng.random_bool(config.occlusion_probability) {
                let duration = rng.random_range(1..=(scene.frames - 1).min(2));
                scene.occluder = Some(Occluder {
                    joint: rng.random_range(0..scene.joints),
                    start: rng.random_range(0..=scene.frames - duration),
                    duration,
                });
            }
            let mut clip = generate_synthetic_clip(&scene, clip_seed)?;
            clip.clip_id = format!("clip-{i:05}");
            Ok(clip)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSceneConfig {
        SyntheticSceneConfig::default()
    }

    #[test]
    fn default_clip_has_expected_counts() {
        let clip = generate_synthetic_clip(&small(), 7).unwrap();
        assert_eq!(clip.len(), 5);
        assert_eq!(clip.annotations.len(), 5);
        assert!(clip.annotations.iter().all(|a| a.visible.iter().all(|v| *v)));
        assert_eq!(clip.frame_size(), (128, 128));
    }

    #[test]
    fn occluder_hides_its_joint_for_its_duration() {
        let mut cfg = small();
        cfg.occluder = Some(Occluder {
            joint: 2,
            start: 2,
            duration: 2,
        });
        let clip = generate_synthetic_clip(&cfg, 7).unwrap();
        for (t, a) in clip.annotations.iter().enumerate() {
            for (j, v) in a.visible.iter().enumerate() {
                let hidden = j == 2 && (t == 2 || t == 3);
                assert_eq!(*v, !hidden, "frame {t} joint {j}");
            }
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let a = generate_synthetic_clip(&small(), 7).unwrap();
        let b = generate_synthetic_clip(&small(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_clip(&small(), 8).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn joints_are_drawn_in_their_colour() {
        let clip = generate_synthetic_clip(&small(), 3).unwrap();
        let a = &clip.annotations[0];
        // The last-drawn disk wins where disks overlap; the head is drawn last.
        let c = a.coords[4];
        assert_eq!(clip.frames[0].get(c[1] as usize, c[0] as usize), joint_color(4, 5));
    }

    #[test]
    fn rejects_empty_clip_and_oversized_figure() {
        let mut cfg = small();
        cfg.frames = 0;
        assert!(generate_synthetic_clip(&cfg, 1).is_err());
        let mut cfg = small();
        cfg.bone_lengths = vec![80.0; 4];
        assert!(generate_synthetic_clip(&cfg, 1).is_err());
        let mut cfg = small();
        cfg.occluder = Some(Occluder {
            joint: 0,
            start: 0,
            duration: 5,
        });
        assert!(generate_synthetic_clip(&cfg, 1).is_err());
    }

    #[test]
    fn flip_permutation_swaps_hands() {
        assert_eq!(Skeleton::stick_figure(5).flip_permutation(), vec![0, 1, 3, 2, 4]);
        assert_eq!(Skeleton::stick_figure(13).flip_pairs, vec![(2, 3), (6, 7), (10, 11)]);
    }

    #[test]
    fn dataset_is_deterministic_and_occludes() {
        let cfg = DatasetConfig::occlusion_heavy(6);
        let a = generate_dataset(&cfg, 11).unwrap();
        assert_eq!(a, generate_dataset(&cfg, 11).unwrap());
        let hidden = a.iter().flat_map(|c| &c.annotations).flat_map(|an| &an.visible).filter(|v| !**v).count();
        assert!(hidden > 0);
    }
}

//! Clip-consistent geometric augmentation.
//!
//! A point `p` maps to `c + s·R(θ)·F·(p − c) + o`, where `c` is the person
//! centre (mean box centre over the clip, rounded to whole pixels), `F`
//! mirrors x when flipping and `o` centres the frame in the output canvas.
//! With y pointing down, positive angles turn clockwise on screen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, JointAnnotation, VideoClip};
use crate::error::{DkdError, Result};

pub const SCALE_RANGE: (f64, f64) = (0.8, 1.4);
pub const MAX_ROTATION_DEG: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
    /// Seed the parameters were drawn from, kept for logging.
    pub seed: u64,
    /// Side of the square output canvas.
    pub output_size: usize,
    /// Joint pairs exchanged by a flip.
    pub flip_pairs: Vec<(usize, usize)>,
}

impl AugmentationParams {
    pub fn identity(output_size: usize) -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            flip: false,
            seed: 0,
            output_size,
            flip_pairs: Vec::new(),
        }
    }

    /// Uniform scale and rotation over the allowed ranges; a coin flip for
    /// mirroring when `allow_flip`.
    pub fn sample(seed: u64, output_size: usize, allow_flip: bool, flip_pairs: Vec<(usize, usize)>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            rotation_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            flip: allow_flip && rng.random_bool(0.5),
            seed,
            output_size,
            flip_pairs,
        }
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&self.scale) {
            return Err(DkdError::Config(format!("scale {} outside [0.8, 1.4]", self.scale)));
        }
        if !(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).contains(&self.rotation_deg) {
            return Err(DkdError::Config(format!("rotation {} outside [-40, 40]", self.rotation_deg)));
        }
        if self.output_size == 0 {
            return Err(DkdError::Config("output size must be positive".into()));
        }
        if self.flip_pairs.iter().any(|&(a, b)| a >= joints || b >= joints || a == b) {
            return Err(DkdError::Config(format!("flip pairs {:?} invalid for {joints} joints", self.flip_pairs)));
        }
        Ok(())
    }
}

struct Affine {
    /// Forward linear part, row-major 2×2.
    a: [f64; 4],
    center: [f64; 2],
    offset: [f64; 2],
}

impl Affine {
    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        [
            self.center[0] + self.offset[0] + self.a[0] * dx + self.a[1] * dy,
            self.center[1] + self.offset[1] + self.a[2] * dx + self.a[3] * dy,
        ]
    }

    fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        let det = self.a[0] * self.a[3] - self.a[1] * self.a[2];
        let (dx, dy) = (q[0] - self.center[0] - self.offset[0], q[1] - self.center[1] - self.offset[1]);
        [
            self.center[0] + (self.a[3] * dx - self.a[1] * dy) / det,
            self.center[1] + (-self.a[2] * dx + self.a[0] * dy) / det,
        ]
    }
}

fn sample_bilinear(frame: &Frame, x: f64, y: f64) -> [f32; 3] {
    // Pixel centres sit at half-integers.
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let mut out = [0.0f64; 3];
    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let (r, c) = (y0 + dy, x0 + dx);
            if r < 0.0 || c < 0.0 || r >= frame.height() as f64 || c >= frame.width() as f64 {
                continue;
            }
            let px = frame.get(r as usize, c as usize);
            for ch in 0..3 {
                out[ch] += w * px[ch] as f64;
            }
        }
    }
    out.map(|v| v as f32)
}

/// Applies one transform to every frame and annotation of `clip`.
/// Joints mapped outside the canvas become invisible.
pub fn augment_clip(clip: &VideoClip, params: &AugmentationParams) -> Result<VideoClip> {
    let k = clip.num_joints();
    params.validate(k)?;
    let (h, w) = clip.frame_size();
    let t = clip.len() as f64;
    let mean = clip.annotations.iter().fold([0.0, 0.0], |acc, a| {
        let b = a.person_bbox;
        [acc[0] + (b[0] + b[2]) / (2.0 * t), acc[1] + (b[1] + b[3]) / (2.0 * t)]
    });
    let center = [mean[0].round(), mean[1].round()];
    let size = params.output_size;
    let offset = [((size as f64 - w as f64) / 2.0).floor(), ((size as f64 - h as f64) / 2.0).floor()];
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let f = if params.flip { -1.0 } else { 1.0 };
    let s = params.scale;
    let affine = Affine {
        a: [s * cos * f, -s * sin, s * sin * f, s * cos],
        center,
        offset,
    };
    let mut perm: Vec<usize> = (0..k).collect();
    if params.flip {
        for &(a, b) in &params.flip_pairs {
            perm.swap(a, b);
        }
    }

    let mut frames = Vec::with_capacity(clip.len());
    let mut annotations = Vec::with_capacity(clip.len());
    for (frame, ann) in clip.frames.iter().zip(&clip.annotations) {
        let mut pixels = Vec::with_capacity(size * size * 3);
        for row in 0..size {
            for col in 0..size {
                let p = affine.invert([col as f64 + 0.5, row as f64 + 0.5]);
                pixels.extend(sample_bilinear(frame, p[0], p[1]).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        frames.push(Frame::new(size, size, pixels)?);

        let mut coords = Vec::with_capacity(k);
        let mut visible = Vec::with_capacity(k);
        for &src in &perm {
            let q = affine.apply(ann.coords[src]);
            let inside = (0.0..size as f64).contains(&q[0]) && (0.0..size as f64).contains(&q[1]);
            coords.push(q);
            visible.push(ann.visible[src] && inside);
        }
        let b = ann.person_bbox;
        let corners = [[b[0], b[1]], [b[2], b[1]], [b[0], b[3]], [b[2], b[3]]].map(|c| affine.apply(c));
        let lim = size as f64;
        let person_bbox = [
            corners.iter().map(|c| c[0]).fold(f64::MAX, f64::min).clamp(0.0, lim),
            corners.iter().map(|c| c[1]).fold(f64::MAX, f64::min).clamp(0.0, lim),
            corners.iter().map(|c| c[0]).fold(f64::MIN, f64::max).clamp(0.0, lim),
            corners.iter().map(|c| c[1]).fold(f64::MIN, f64::max).clamp(0.0, lim),
        ];
        let (ta, tb) = ann.torso_pair;
        annotations.push(JointAnnotation {
            coords,
            visible,
            person_bbox,
            torso_pair: (perm[ta], perm[tb]),
        });
    }
    VideoClip::new(clip.clip_id.clone(), frames, annotations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_clip, SyntheticSceneConfig};

    fn clip() -> VideoClip {
        generate_synthetic_clip(&SyntheticSceneConfig::default(), 5).unwrap()
    }

    #[test]
    fn identity_leaves_clip_unchanged() {
        let c = clip();
        assert_eq!(augment_clip(&c, &AugmentationParams::identity(128)).unwrap(), c);
    }

    #[test]
    fn padding_shifts_by_the_border() {
        let c = clip();
        let out = augment_clip(&c, &AugmentationParams::identity(144)).unwrap();
        assert_eq!(out.frame_size(), (144, 144));
        assert_eq!(out.annotations[0].coords[1][0], c.annotations[0].coords[1][0] + 8.0);
        assert_eq!(out.frames[0].get(20, 30), c.frames[0].get(12, 22));
        assert_eq!(out.frames[0].get(0, 0), [0.0; 3]);
    }

    #[test]
    fn double_flip_restores_the_clip() {
        let c = clip();
        let mut p = AugmentationParams::identity(128);
        p.flip = true;
        p.flip_pairs = vec![(2, 3)];
        let once = augment_clip(&c, &p).unwrap();
        assert_eq!(once.annotations[0].visible.len(), 5);
        let twice = augment_clip(&once, &p).unwrap();
        for (a, b) in twice.annotations.iter().zip(&c.annotations) {
            for (p, q) in a.coords.iter().zip(&b.coords) {
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_params() {
        let c = clip();
        let mut p = AugmentationParams::identity(128);
        p.scale = 1.5;
        assert!(augment_clip(&c, &p).is_err());
        let mut p = AugmentationParams::identity(128);
        p.rotation_deg = -41.0;
        assert!(augment_clip(&c, &p).is_err());
    }

    #[test]
    fn sampled_params_are_in_range_and_seeded() {
        for seed in 0..50 {
            let p = AugmentationParams::sample(seed, 128, false, vec![]);
            assert!(p.validate(5).is_ok());
            assert!(!p.flip);
            assert_eq!(p, AugmentationParams::sample(seed, 128, false, vec![]));
        }
    }
}

//! Video clips, joint annotations and confidence maps.
//!
//! Coordinates are in frame pixels with the origin at the top-left pixel
//! corner, x to the right and y downward. Pixel `(row, col)` covers
//! `[col, col+1) × [row, row+1)`.

mod augment;
mod heatmap;
mod io;
mod synth;

pub use augment::{augment_clip, AugmentationParams};
pub use heatmap::{decode_joints, decode_with_confidence, encode_confidence_maps, encode_clip, DEFAULT_SIGMA};
pub use io::{load_clip, load_dataset, save_clip, save_dataset, save_frame_png};
pub(crate) use synth::Canvas;
pub use synth::{generate_dataset, joint_color, generate_synthetic_clip, DatasetConfig, MotionParams, Occluder, Skeleton, SyntheticSceneConfig};

use dkd_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DkdError, Result};

/// One RGB frame, values in `[0, 1]`, stored row-major as H×W×3.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(DkdError::Shape(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DkdError::Config("frame pixel outside [0, 1]".into()));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        for (c, v) in rgb.iter().enumerate() {
            self.pixels[i + c] = v.clamp(0.0, 1.0);
        }
    }

    /// The frame as a 1×3×H×W network input.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for (p, rgb) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = rgb[c] as f64;
            }
        }
        Tensor::new(&[1, 3, self.height, self.width], data).expect("3 planes")
    }

    /// Block-averaged 1×3×(H/stride)×(W/stride) copy.
    pub fn downsample_tensor(&self, stride: usize) -> Result<Tensor> {
        if stride == 0 || self.height % stride != 0 || self.width % stride != 0 {
            return Err(DkdError::Shape(format!(
                "stride {stride} does not divide {}x{}",
                self.height, self.width
            )));
        }
        let (m, n) = (self.height / stride, self.width / stride);
        let mut data = vec![0.0; 3 * m * n];
        let norm = 1.0 / (stride * stride) as f64;
        for row in 0..self.height {
            for col in 0..self.width {
                let rgb = self.get(row, col);
                let cell = (row / stride) * n + col / stride;
                for c in 0..3 {
                    data[c * m * n + cell] += rgb[c] as f64 * norm;
                }
            }
        }
        Ok(Tensor::new(&[1, 3, m, n], data)?)
    }
}

/// Per-frame joint labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointAnnotation {
    pub coords: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
    /// `[x0, y0, x1, y1]`.
    pub person_bbox: [f64; 4],
    pub torso_pair: (usize, usize),
}

impl JointAnnotation {
    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let k = self.coords.len();
        if self.visible.len() != k {
            return Err(DkdError::CountMismatch {
                what: "visibility flags".into(),
                expected: k,
                found: self.visible.len(),
            });
        }
        let (a, b) = self.torso_pair;
        if a == b || a >= k || b >= k {
            return Err(DkdError::Config(format!("bad torso pair ({a}, {b}) for {k} joints")));
        }
        let [x0, y0, x1, y1] = self.person_bbox;
        for (j, (c, &v)) in self.coords.iter().zip(&self.visible).enumerate() {
            if !v {
                continue;
            }
            if !(0.0..width as f64).contains(&c[0]) || !(0.0..height as f64).contains(&c[1]) {
                return Err(DkdError::Config(format!("visible joint {j} at {c:?} lies outside the frame")));
            }
            if c[0] < x0 || c[0] > x1 || c[1] < y0 || c[1] > y1 {
                return Err(DkdError::Config(format!("visible joint {j} outside the person box")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub frames: Vec<Frame>,
    pub annotations: Vec<JointAnnotation>,
}

impl VideoClip {
    pub fn new(clip_id: impl Into<String>, frames: Vec<Frame>, annotations: Vec<JointAnnotation>) -> Result<Self> {
        let clip = Self {
            clip_id: clip_id.into(),
            frames,
            annotations,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| (f.height, f.width))
    }

    pub fn num_joints(&self) -> usize {
        self.annotations.first().map_or(0, |a| a.num_joints())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(DkdError::Config("a clip needs at least one frame".into()));
        }
        if self.frames.len() != self.annotations.len() {
            return Err(DkdError::CountMismatch {
                what: "annotations per frame".into(),
                expected: self.frames.len(),
                found: self.annotations.len(),
            });
        }
        let (h, w) = self.frame_size();
        let k = self.num_joints();
        for (t, (f, a)) in self.frames.iter().zip(&self.annotations).enumerate() {
            if (f.height, f.width) != (h, w) {
                return Err(DkdError::Shape(format!("frame {t} is {}x{}, expected {h}x{w}", f.height, f.width)));
            }
            if a.num_joints() != k {
                return Err(DkdError::CountMismatch {
                    what: format!("joints in frame {t}"),
                    expected: k,
                    found: a.num_joints(),
                });
            }
            a.validate(h, w)?;
        }
        Ok(())
    }

    /// Frames `start..start+len` as a new clip sharing the id.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(DkdError::Config(format!(
                "window {start}..{} outside clip of {} frames",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            clip_id: self.clip_id.clone(),
            frames: self.frames[start..start + len].to_vec(),
            annotations: self.annotations[start..start + len].to_vec(),
        })
    }
}

/// K×m×n per-joint confidence planes at `stride` pixels per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMaps {
    pub joints: usize,
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl ConfidenceMaps {
    pub fn zeros(joints: usize, rows: usize, cols: usize, stride: usize) -> Self {
        Self {
            joints,
            rows,
            cols,
            stride,
            data: vec![0.0; joints * rows * cols],
        }
    }

    pub fn from_tensor(t: &Tensor, stride: usize) -> Result<Self> {
        let (n, k, m, c) = t.dims4()?;
        if n != 1 {
            return Err(DkdError::Shape(format!("expected a single map stack, got batch {n}")));
        }
        Ok(Self {
            joints: k,
            rows: m,
            cols: c,
            stride,
            data: t.data().to_vec(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.joints, self.rows, self.cols], self.data.clone()).expect("consistent map")
    }

    pub fn channel(&self, j: usize) -> &[f64] {
        let plane = self.rows * self.cols;
        &self.data[j * plane..(j + 1) * plane]
    }

    pub fn at(&self, j: usize, row: usize, col: usize) -> f64 {
        self.data[(j * self.rows + row) * self.cols + col]
    }
}

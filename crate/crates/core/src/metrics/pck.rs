use serde::{Deserialize, Serialize};

use crate::data::JointAnnotation;
use crate::error::{DkdError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Longer side of the person box.
    PersonSize,
    /// Distance between the torso joints.
    TorsoSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub alpha: f64,
    pub reference: Reference,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            reference: Reference::PersonSize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    /// `None` for joints never visible in the groundtruth.
    pub per_joint: Vec<Option<f64>>,
    pub mean: f64,
    pub counted: usize,
}

/// Running totals so several clips can be scored as one set.
#[derive(Clone, Debug)]
pub struct PckAccumulator {
    cfg: MetricConfig,
    hits: Vec<usize>,
    seen: Vec<usize>,
    frames: usize,
}

impl PckAccumulator {
    pub fn new(cfg: MetricConfig) -> Result<Self> {
        if !(cfg.alpha > 0.0) || !cfg.alpha.is_finite() {
            return Err(DkdError::Config(format!("alpha must be positive, got {}", cfg.alpha)));
        }
        Ok(Self {
            cfg,
            hits: Vec::new(),
            seen: Vec::new(),
            frames: 0,
        })
    }

    pub fn add(&mut self, pred: &[Vec<[f64; 2]>], gt: &[JointAnnotation]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(DkdError::CountMismatch {
                what: "predicted frames".into(),
                expected: gt.len(),
                found: pred.len(),
            });
        }
        for (p, g) in pred.iter().zip(gt) {
            let frame = self.frames;
            self.frames += 1;
            let k = g.num_joints();
            if p.len() != k {
                return Err(DkdError::CountMismatch {
                    what: format!("predicted joints in frame {frame}"),
                    expected: k,
                    found: p.len(),
                });
            }
            if self.seen.is_empty() {
                self.hits = vec![0; k];
                self.seen = vec![0; k];
            } else if self.seen.len() != k {
                return Err(DkdError::CountMismatch {
                    what: format!("joints in frame {frame}"),
                    expected: self.seen.len(),
                    found: k,
                });
            }
            if !g.visible.iter().any(|v| *v) {
                continue;
            }
            let l = reference_length(g, self.cfg.reference)?;
            if !(l > 0.0) {
                return Err(DkdError::DegenerateReference { frame });
            }
            let threshold = self.cfg.alpha * l;
            for j in 0..k {
                if !g.visible[j] {
                    continue;
                }
                self.seen[j] += 1;
                let (dx, dy) = (p[j][0] - g.coords[j][0], p[j][1] - g.coords[j][1]);
                if (dx * dx + dy * dy).sqrt() <= threshold {
                    self.hits[j] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> Result<PckReport> {
        let counted: usize = self.seen.iter().sum();
        if counted == 0 {
            return Err(DkdError::Config("no visible joints to score".into()));
        }
        Ok(PckReport {
            per_joint: self
                .hits
                .iter()
                .zip(&self.seen)
                .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
                .collect(),
            mean: self.hits.iter().sum::<usize>() as f64 / counted as f64,
            counted,
        })
    }
}

fn reference_length(g: &JointAnnotation, reference: Reference) -> Result<f64> {
    Ok(match reference {
        Reference::PersonSize => {
            let [x0, y0, x1, y1] = g.person_bbox;
            (x1 - x0).max(y1 - y0)
        }
        Reference::TorsoSize => {
            let (a, b) = g.torso_pair;
            let (pa, pb) = (g.coords.get(a), g.coords.get(b));
            match (pa, pb) {
                (Some(pa), Some(pb)) => ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt(),
                _ => return Err(DkdError::Config(format!("torso pair ({a}, {b}) out of range"))),
            }
        }
    })
}

/// Fraction of visible groundtruth joints whose prediction lies within
/// `alpha · L` pixels. Micro-averaged over joint instances.
pub fn pck_score(pred: &[Vec<[f64; 2]>], gt: &[JointAnnotation], cfg: MetricConfig) -> Result<PckReport> {
    let mut acc = PckAccumulator::new(cfg)?;
    acc.add(pred, gt)?;
    acc.report()
}

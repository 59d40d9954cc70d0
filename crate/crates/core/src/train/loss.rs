use dkd_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::ConfidenceMaps;
use crate::error::{DkdError, Result};

/// Squared error averaged over every element.
pub fn l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(DkdError::Shape(format!("l2 over {} vs {} elements", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `Σ_t l2(h_t, ĥ_t)`.
pub fn generator_loss(h: &[ConfidenceMaps], target: &[ConfidenceMaps]) -> Result<f64> {
    if h.len() != target.len() {
        return Err(DkdError::CountMismatch {
            what: "target frames".into(),
            expected: h.len(),
            found: target.len(),
        });
    }
    h.iter().zip(target).map(|(a, b)| l2(&a.data, &b.data)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeRole {
    /// `h_{t+1} − h_t` from predictions.
    Predicted,
    /// `ĥ_{t+1} − ĥ_t` from groundtruth.
    Groundtruth,
    /// Discriminator output on a groundtruth pair.
    ReconstructedReal,
    /// Discriminator output on a predicted pair.
    ReconstructedFake,
}

/// Frame-to-frame change of confidence maps, K×m×n.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMap {
    pub role: ChangeRole,
    pub values: Tensor,
}

impl ChangeMap {
    /// `next − prev`.
    pub fn between(prev: &ConfidenceMaps, next: &ConfidenceMaps, role: ChangeRole) -> Result<Self> {
        if prev.data.len() != next.data.len() {
            return Err(DkdError::Shape("maps of different sizes".into()));
        }
        let data = next.data.iter().zip(&prev.data).map(|(b, a)| b - a).collect();
        Ok(Self {
            role,
            values: Tensor::new(&[1, next.joints, next.rows, next.cols], data)?,
        })
    }
}

fn paired_l2(a: &[ChangeMap], b: &[ChangeMap]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DkdError::CountMismatch {
            what: "change maps".into(),
            expected: a.len(),
            found: b.len(),
        });
    }
    a.iter().zip(b).map(|(x, y)| l2(x.values.data(), y.values.data())).sum()
}

/// `λ·Σ l2(d^f, d) − Σ l2(d^r, d̂)`; the discriminator maximizes it.
pub fn discriminator_loss(
    fake_recon: &[ChangeMap],
    fake: &[ChangeMap],
    real_recon: &[ChangeMap],
    real: &[ChangeMap],
    lambda: f64,
) -> Result<f64> {
    Ok(lambda * paired_l2(fake_recon, fake)? - paired_l2(real_recon, real)?)
}

/// The adversarial balance λ, kept in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LambdaState {
    pub value: f64,
}

impl LambdaState {
    pub fn new(value: f64) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
        }
    }

    pub fn update(&mut self, real_errs: &[f64], fake_errs: &[f64], gamma: f64) -> f64 {
        self.value = lambda_update(self.value, real_errs, fake_errs, gamma);
        self.value
    }
}

/// `clamp(λ + γ·(Σ real − Σ fake), 0, 1)`.
pub fn lambda_update(lambda: f64, real_errs: &[f64], fake_errs: &[f64], gamma: f64) -> f64 {
    let gap = real_errs.iter().sum::<f64>() - fake_errs.iter().sum::<f64>();
    (lambda + gamma * gap).clamp(0.0, 1.0)
}

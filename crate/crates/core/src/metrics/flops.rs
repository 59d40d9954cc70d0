//! Multiply-add counts from layer shapes.
//!
//! The unit is multiply-adds (MACs): one `a·b + c` counts once. Batch
//! norm, activations and pooling are counted as zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DkdError, Result};

pub const FLOPS_UNIT: &str = "multiply-adds";

/// One layer, described by its kind and input/output geometry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    /// `conv`, `deconv`, `depthwise`, `batchnorm`, `relu`, `maxpool`, `avgpool`.
    pub kind: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: &str, in_c: usize, out_c: usize, kernel: usize, in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            in_c,
            out_c,
            kernel,
            in_hw,
            out_hw,
        }
    }

    pub fn macs(&self) -> Result<u64> {
        let k2 = (self.kernel * self.kernel) as u64;
        let out = (self.out_hw.0 * self.out_hw.1) as u64;
        let inp = (self.in_hw.0 * self.in_hw.1) as u64;
        let (ci, co) = (self.in_c as u64, self.out_c as u64);
        Ok(match self.kind.as_str() {
            "conv" => out * co * ci * k2,
            // Every input pixel scatters a k×k×out_c patch.
            "deconv" => inp * ci * co * k2,
            "depthwise" => out * co * k2,
            "batchnorm" | "relu" | "maxpool" | "avgpool" => 0,
            other => return Err(DkdError::UnknownLayerKind(other.into())),
        })
    }
}

/// A named network component as a list of layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub component: String,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn macs(&self) -> Result<u64> {
        self.layers.iter().map(LayerSpec::macs).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingComparison {
    pub factorized: u64,
    pub full_kernel: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub unit: String,
    pub per_component: BTreeMap<String, u64>,
    pub total: u64,
    pub matching: Option<MatchingComparison>,
}

/// Matching cost on an `m×n` map with `c` feature channels, `k` joints and
/// `s×s` kernels: factorized (V 1×1, depthwise s×s, U 1×1) against a dense
/// s×s×c×k convolution.
pub fn matching_macs(m: usize, n: usize, c: usize, k: usize, s: usize) -> MatchingComparison {
    let v = LayerSpec::new("v", "conv", c, c, 1, (m, n), (m, n));
    let dw = LayerSpec::new("dw", "depthwise", c, c, s, (m, n), (m, n));
    let u = LayerSpec::new("u", "conv", c, k, 1, (m, n), (m, n));
    let full = LayerSpec::new("full", "conv", c, k, s, (m, n), (m, n));
    let f = |l: LayerSpec| l.macs().expect("known kind");
    MatchingComparison {
        factorized: f(v) + f(dw) + f(u),
        full_kernel: f(full),
    }
}

/// Sums each component; repeated component names accumulate.
pub fn flops_report(components: &[ModelSpec], matching: Option<MatchingComparison>) -> Result<FlopsReport> {
    let mut per_component = BTreeMap::new();
    for c in components {
        *per_component.entry(c.component.clone()).or_insert(0) += c.macs()?;
    }
    Ok(FlopsReport {
        unit: FLOPS_UNIT.into(),
        total: per_component.values().sum(),
        per_component,
        matching,
    })
}

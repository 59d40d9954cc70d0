use dkd_autograd::{Graph, Var};
use serde::{Deserialize, Serialize};

use super::{Binding, BnId, Builder, Init, ParamId};
use crate::error::{DkdError, Result};
use crate::metrics::LayerSpec;

pub(crate) type Hw = (usize, usize);

fn conv_hw(hw: Hw, k: usize, stride: usize, pad: usize) -> Hw {
    ((hw.0 + 2 * pad - k) / stride + 1, (hw.1 + 2 * pad - k) / stride + 1)
}

pub(crate) struct Conv {
    name: String,
    w: ParamId,
    b: Option<ParamId>,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn build(b: &mut Builder, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, bias: bool, std: Option<f64>) -> Self {
        let std = std.unwrap_or_else(|| (2.0 / (in_c * k * k) as f64).sqrt());
        let (w, bias) = b.scoped(name, |b| {
            let w = b.param("weight", &[out_c, in_c, k, k], Init::Normal(std));
            (w, bias.then(|| b.param("bias", &[out_c], Init::Zeros)))
        });
        Self {
            name: name.into(),
            w,
            b: bias,
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, b.var(self.w), self.b.map(|p| b.var(p)), self.stride, self.pad)?)
    }

    pub fn spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        let o = conv_hw(hw, self.k, self.stride, self.pad);
        out.push(LayerSpec::new(&self.name, "conv", self.in_c, self.out_c, self.k, hw, o));
        o
    }
}

pub(crate) struct Deconv {
    name: String,
    w: ParamId,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Deconv {
    pub fn build(b: &mut Builder, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        let taps = in_c * (k * k) / (stride * stride);
        let std = (2.0 / taps.max(1) as f64).sqrt();
        let w = b.scoped(name, |b| b.param("weight", &[in_c, out_c, k, k], Init::Normal(std)));
        Self {
            name: name.into(),
            w,
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        Ok(g.conv_transpose2d(x, b.var(self.w), None, self.stride, self.pad, 0)?)
    }

    pub fn spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        let f = |v: usize| (v - 1) * self.stride + self.k - 2 * self.pad;
        let o = (f(hw.0), f(hw.1));
        out.push(LayerSpec::new(&self.name, "deconv", self.in_c, self.out_c, self.k, hw, o));
        o
    }
}

pub(crate) struct Norm {
    name: String,
    gamma: ParamId,
    beta: ParamId,
    stats: BnId,
    c: usize,
}

impl Norm {
    pub fn build(b: &mut Builder, name: &str, c: usize) -> Self {
        let (gamma, beta, stats) = b.scoped(name, |b| {
            (b.param("gamma", &[c], Init::Ones), b.param("beta", &[c], Init::Zeros), b.bn_stats(c))
        });
        Self {
            name: name.into(),
            gamma,
            beta,
            stats,
            c,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binding, x: Var) -> Result<Var> {
        b.batch_norm(g, x, self.gamma, self.beta, self.stats)
    }

    pub fn spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        out.push(LayerSpec::new(&self.name, "batchnorm", self.c, self.c, 1, hw, hw));
        hw
    }
}

/// Convolution (or deconvolution), batch norm, optional ReLU.
pub(crate) struct Unit<L> {
    layer: L,
    norm: Norm,
    relu: bool,
}

pub(crate) trait Linear {
    fn apply(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var>;
    fn layer_spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw;
}

impl Linear for Conv {
    fn apply(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        self.forward(g, b, x)
    }
    fn layer_spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        self.spec(hw, out)
    }
}

impl Linear for Deconv {
    fn apply(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        self.forward(g, b, x)
    }
    fn layer_spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        self.spec(hw, out)
    }
}

impl<L: Linear> Unit<L> {
    pub fn new(b: &mut Builder, name: &str, layer: L, c: usize, relu: bool) -> Self {
        let norm = Norm::build(b, &format!("{name}_bn"), c);
        Self { layer, norm, relu }
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binding, x: Var) -> Result<Var> {
        let y = self.layer.apply(g, b, x)?;
        let y = self.norm.forward(g, b, y)?;
        Ok(if self.relu { g.relu(y) } else { y })
    }

    pub fn spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        let hw = self.layer.layer_spec(hw, out);
        let hw = self.norm.spec(hw, out);
        if self.relu {
            out.push(LayerSpec::new(format!("{}_relu", self.norm.name), "relu", self.norm.c, self.norm.c, 1, hw, hw));
        }
        hw
    }
}

fn conv_unit(b: &mut Builder, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, relu: bool) -> Unit<Conv> {
    let conv = Conv::build(b, name, in_c, out_c, k, stride, false, None);
    Unit::new(b, name, conv, out_c, relu)
}

/// Two 3×3 convolutions with an identity or projected shortcut.
pub(crate) struct ResBlock {
    a: Unit<Conv>,
    b: Unit<Conv>,
    shortcut: Option<Unit<Conv>>,
    out_c: usize,
}

impl ResBlock {
    fn build(bld: &mut Builder, name: &str, in_c: usize, out_c: usize, stride: usize) -> Self {
        bld.scoped(name, |bld| Self {
            a: conv_unit(bld, "conv1", in_c, out_c, 3, stride, true),
            b: conv_unit(bld, "conv2", out_c, out_c, 3, 1, false),
            shortcut: (stride != 1 || in_c != out_c).then(|| conv_unit(bld, "proj", in_c, out_c, 1, stride, false)),
            out_c,
        })
    }

    fn forward(&self, g: &mut Graph, bd: &mut Binding, x: Var) -> Result<Var> {
        let y = self.a.forward(g, bd, x)?;
        let y = self.b.forward(g, bd, y)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(g, bd, x)?,
            None => x,
        };
        let sum = g.add(y, skip)?;
        Ok(g.relu(sum))
    }

    fn spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        let o = self.a.spec(hw, out);
        let o = self.b.spec(o, out);
        if let Some(s) = &self.shortcut {
            s.spec(hw, out);
        }
        out.push(LayerSpec::new("block_relu", "relu", self.out_c, self.out_c, 1, o, o));
        o
    }
}

/// Width and depth family for the backbones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneSize {
    Tiny,
    Small,
    Medium,
}

impl BackboneSize {
    /// Stem width, then `(width, blocks)` per stage.
    pub fn widths(self) -> (usize, [(usize, usize); 3]) {
        match self {
            BackboneSize::Tiny => (8, [(16, 1), (24, 1), (32, 1)]),
            BackboneSize::Small => (16, [(16, 1), (32, 1), (64, 1)]),
            BackboneSize::Medium => (16, [(32, 1), (48, 2), (64, 2)]),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneSize::Tiny => "tiny",
            BackboneSize::Small => "small",
            BackboneSize::Medium => "medium",
        }
    }
}

impl std::str::FromStr for BackboneSize {
    type Err = DkdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(BackboneSize::Tiny),
            "small" => Ok(BackboneSize::Small),
            "medium" => Ok(BackboneSize::Medium),
            other => Err(DkdError::Config(format!("unknown backbone size `{other}`"))),
        }
    }
}

/// Residual feature extractor.
///
/// The strided form (stem and every stage at stride 2, reaching 1/16, then
/// a 4×4 stride-2 and a 3×3 stride-1 deconvolution) has total stride 8.
/// The flat form keeps full resolution and has no deconvolutions.
pub struct Backbone {
    stem: Unit<Conv>,
    blocks: Vec<ResBlock>,
    up: Option<(Unit<Deconv>, Unit<Deconv>)>,
    out_c: usize,
}

impl Backbone {
    pub(crate) fn build(b: &mut Builder, size: BackboneSize, in_c: usize, out_c: usize, strided: bool) -> Self {
        let (stem_c, stages) = size.widths();
        let s = if strided { 2 } else { 1 };
        let stem = conv_unit(b, "stem", in_c, stem_c, 3, s, true);
        let mut blocks = Vec::new();
        let mut c = stem_c;
        for (i, &(w, n)) in stages.iter().enumerate() {
            for j in 0..n {
                let stride = if j == 0 { s } else { 1 };
                blocks.push(ResBlock::build(b, &format!("stage{}.{j}", i + 1), c, w, stride));
                c = w;
            }
        }
        let up = strided.then(|| {
            let d1 = Deconv::build(b, "up1", c, out_c, 4, 2, 1);
            let d1 = Unit::new(b, "up1", d1, out_c, true);
            let d2 = Deconv::build(b, "up2", out_c, out_c, 3, 1, 1);
            let d2 = Unit::new(b, "up2", d2, out_c, true);
            (d1, d2)
        });
        Self {
            stem,
            blocks,
            up,
            out_c: if strided { out_c } else { c },
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binding, x: Var) -> Result<Var> {
        let mut y = self.stem.forward(g, b, x)?;
        for block in &self.blocks {
            y = block.forward(g, b, y)?;
        }
        if let Some((d1, d2)) = &self.up {
            y = d1.forward(g, b, y)?;
            y = d2.forward(g, b, y)?;
        }
        Ok(y)
    }

    pub(crate) fn spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        let mut hw = self.stem.spec(hw, out);
        for block in &self.blocks {
            hw = block.spec(hw, out);
        }
        if let Some((d1, d2)) = &self.up {
            hw = d1.spec(hw, out);
            hw = d2.spec(hw, out);
        }
        hw
    }
}

impl Norm {
    pub fn gamma_id(&self) -> ParamId {
        self.gamma
    }

    pub fn beta_id(&self) -> ParamId {
        self.beta
    }

    pub fn stats_id(&self) -> BnId {
        self.stats
    }
}

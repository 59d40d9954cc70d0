use dkd_autograd::{Graph, Var};

use super::layers::{Backbone, Conv, Hw, Norm, Unit};
use super::{Binding, Builder, Init, ModelConfig, Net, ParamId, ShapeConfig};
use crate::error::{DkdError, Result};
use crate::matching::match_graph;
use crate::metrics::{LayerSpec, ModelSpec};

/// Predicts S×S×C kernel bases from features and confidence maps.
///
/// Two conv-BN-ReLU-maxpool stages, a linear 3×3 convolution and adaptive
/// average pooling to S×S. A pool uses stride 2 while that keeps the map
/// at least S wide, stride 1 otherwise.
pub struct Distillator {
    c1: Unit<Conv>,
    c2: Unit<Conv>,
    c3: Conv,
    hidden: usize,
    channels: usize,
    kernel: usize,
}

impl Distillator {
    fn build(b: &mut Builder, shape: &ShapeConfig) -> Self {
        let (c, k) = (shape.channels, shape.joints);
        let hidden = 2 * c;
        b.scoped("distill", |b| {
            let c1 = Conv::build(b, "conv1", c + k, hidden, 3, 1, false, None);
            let c1 = Unit::new(b, "conv1", c1, hidden, true);
            let c2 = Conv::build(b, "conv2", hidden, hidden, 3, 1, false, None);
            let c2 = Unit::new(b, "conv2", c2, hidden, true);
            let c3 = Conv::build(b, "conv3", hidden, c, 3, 1, true, None);
            Self {
                c1,
                c2,
                c3,
                hidden,
                channels: c,
                kernel: shape.kernel,
            }
        })
    }

    fn pool_stride(&self, side: usize) -> usize {
        if (side - 2) / 2 + 1 >= self.kernel {
            2
        } else {
            1
        }
    }

    fn pool(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, _, h, w) = g.value(x).dims4()?;
        let stride = self.pool_stride(h.min(w));
        Ok(g.max_pool2d(x, 2, stride)?)
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binding, f: Var, h: Var) -> Result<Var> {
        let (fs, hs) = (g.value(f).shape().to_vec(), g.value(h).shape().to_vec());
        if fs.len() != 4 || hs.len() != 4 || fs[2..] != hs[2..] {
            return Err(DkdError::Shape(format!("features {fs:?} and maps {hs:?} differ in size")));
        }
        b.counts.distillator += 1;
        let x = g.concat_channels(&[f, h])?;
        let x = self.c1.forward(g, b, x)?;
        let x = self.pool(g, x)?;
        let x = self.c2.forward(g, b, x)?;
        let x = self.pool(g, x)?;
        let x = self.c3.forward(g, b, x)?;
        Ok(g.adaptive_avg_pool2d(x, self.kernel, self.kernel)?)
    }

    fn spec(&self, hw: Hw, out: &mut Vec<LayerSpec>) -> Hw {
        let pool = |hw: Hw, out: &mut Vec<LayerSpec>| {
            let s = self.pool_stride(hw.0.min(hw.1));
            let o = ((hw.0 - 2) / s + 1, (hw.1 - 2) / s + 1);
            out.push(LayerSpec::new("distill.pool", "maxpool", self.hidden, self.hidden, 2, hw, o));
            o
        };
        let hw = self.c1.spec(hw, out);
        let hw = pool(hw, out);
        let hw = self.c2.spec(hw, out);
        let hw = pool(hw, out);
        let hw = self.c3.spec(hw, out);
        let o = (self.kernel, self.kernel);
        out.push(LayerSpec::new("distill.adaptive_pool", "avgpool", self.channels, self.channels, 1, hw, o));
        o
    }
}

/// The pose generator: initializer P, encoder F, distillator Φ, the
/// factorized matching head (V, U, batch norm) and a per-frame head used
/// by the single-frame ablations.
pub struct Generator {
    pub net: Net,
    pub config: ModelConfig,
    p_backbone: Backbone,
    classifier: Conv,
    f_backbone: Backbone,
    pub distillator: Distillator,
    u: ParamId,
    v: ParamId,
    match_norm: Norm,
    frame_head: Conv,
}

impl Generator {
    pub(crate) fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let shape = cfg.shape;
        let (c, k) = (shape.channels, shape.joints);
        let mut net = Net::default();
        let mut b = Builder::new(&mut net, seed);
        let p_backbone = b.scoped("initializer", |b| Backbone::build(b, cfg.initializer, 3, c, true));
        let classifier = b.scoped("initializer", |b| Conv::build(b, "classifier", c, k, 1, 1, true, Some(0.01)));
        let f_backbone = b.scoped("encoder", |b| Backbone::build(b, cfg.encoder, 3, c, true));
        let distillator = Distillator::build(&mut b, &shape);
        let (u, v, match_norm) = b.scoped("matching", |b| {
            let v = b.param("v", &[1, 1, c, c], Init::NearIdentity(0.01));
            let u = b.param("u", &[1, 1, c, k], Init::Normal((1.0 / c as f64).sqrt()));
            (u, v, Norm::build(b, "bn", k))
        });
        let frame_head = b.scoped("frame_head", |b| Conv::build(b, "classifier", c, k, 1, 1, true, Some(0.01)));
        Self {
            net,
            config: *cfg,
            p_backbone,
            classifier,
            f_backbone,
            distillator,
            u,
            v,
            match_norm,
            frame_head,
        }
    }

    pub fn shape(&self) -> &ShapeConfig {
        &self.config.shape
    }

    pub fn u(&self) -> ParamId {
        self.u
    }

    pub fn v(&self) -> ParamId {
        self.v
    }

    pub fn match_norm_params(&self) -> (ParamId, ParamId, super::BnId) {
        (self.match_norm.gamma_id(), self.match_norm.beta_id(), self.match_norm.stats_id())
    }

    fn check_frame(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.value(x).shape();
        let sh = self.shape();
        if s != [1, 3, sh.height, sh.width] {
            return Err(DkdError::Shape(format!("frame tensor {s:?}, expected [1, 3, {}, {}]", sh.height, sh.width)));
        }
        Ok(())
    }

    /// P: frame (1×3×H×W) to maps (1×K×m×n).
    pub fn initializer(&self, g: &mut Graph, b: &mut Binding, frame: Var) -> Result<Var> {
        self.check_frame(g, frame)?;
        b.counts.initializer += 1;
        let y = self.p_backbone.forward(g, b, frame)?;
        self.classifier.forward(g, b, y)
    }

    /// F: frame (1×3×H×W) to features (1×C×m×n).
    pub fn encode(&self, g: &mut Graph, b: &mut Binding, frame: Var) -> Result<Var> {
        self.check_frame(g, frame)?;
        b.counts.encoder += 1;
        self.f_backbone.forward(g, b, frame)
    }

    /// Φ: features and maps to kernel bases (1×C×S×S).
    pub fn distill(&self, g: &mut Graph, b: &mut Binding, f: Var, h: Var) -> Result<Var> {
        self.distillator.forward(g, b, f, h)
    }

    /// Matching without the final batch norm.
    pub fn match_raw(&self, g: &mut Graph, b: &mut Binding, f: Var, kb: Var) -> Result<Var> {
        b.counts.matching += 1;
        match_graph(g, f, kb, b.var(self.u), b.var(self.v))
    }

    /// Matching followed by batch norm: maps (1×K×m×n).
    pub fn match_kernels(&self, g: &mut Graph, b: &mut Binding, f: Var, kb: Var) -> Result<Var> {
        let raw = self.match_raw(g, b, f, kb)?;
        self.match_norm.forward(g, b, raw)
    }

    /// Per-frame maps straight from encoder features.
    pub fn frame_head(&self, g: &mut Graph, b: &mut Binding, f: Var) -> Result<Var> {
        b.counts.frame_head += 1;
        self.frame_head.forward(g, b, f)
    }

    fn frame_hw(&self) -> Hw {
        (self.shape().height, self.shape().width)
    }

    fn heat_hw(&self) -> Hw {
        (self.shape().m(), self.shape().n())
    }

    pub fn initializer_spec(&self) -> ModelSpec {
        let mut layers = Vec::new();
        let hw = self.p_backbone.spec(self.frame_hw(), &mut layers);
        self.classifier.spec(hw, &mut layers);
        ModelSpec {
            component: "initializer".into(),
            layers,
        }
    }

    pub fn encoder_spec(&self) -> ModelSpec {
        let mut layers = Vec::new();
        self.f_backbone.spec(self.frame_hw(), &mut layers);
        ModelSpec {
            component: "encoder".into(),
            layers,
        }
    }

    pub fn distillator_spec(&self) -> ModelSpec {
        let mut layers = Vec::new();
        self.distillator.spec(self.heat_hw(), &mut layers);
        ModelSpec {
            component: "distillator".into(),
            layers,
        }
    }

    pub fn matching_spec(&self) -> ModelSpec {
        let sh = self.shape();
        let (c, k, s) = (sh.channels, sh.joints, sh.kernel);
        let hw = self.heat_hw();
        let mut layers = vec![
            LayerSpec::new("matching.v", "conv", c, c, 1, hw, hw),
            LayerSpec::new("matching.depthwise", "depthwise", c, c, s, hw, hw),
            LayerSpec::new("matching.u", "conv", c, k, 1, hw, hw),
        ];
        self.match_norm.spec(hw, &mut layers);
        ModelSpec {
            component: "matching".into(),
            layers,
        }
    }

    pub fn frame_head_spec(&self) -> ModelSpec {
        let mut layers = Vec::new();
        self.frame_head.spec(self.heat_hw(), &mut layers);
        ModelSpec {
            component: "frame_head".into(),
            layers,
        }
    }
}

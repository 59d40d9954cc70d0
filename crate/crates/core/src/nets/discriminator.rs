use dkd_autograd::{Graph, Var};

use super::layers::{Backbone, Conv};
use super::{Binding, Builder, ModelConfig, Net};
use crate::error::{DkdError, Result};
use crate::metrics::ModelSpec;

/// Reconstructs the change between two neighbouring confidence maps from
/// both maps and both frames, all at heatmap resolution.
pub struct Discriminator {
    pub net: Net,
    pub config: ModelConfig,
    backbone: Backbone,
    head: Conv,
}

impl Discriminator {
    pub(crate) fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let k = cfg.shape.joints;
        let mut net = Net::default();
        let mut b = Builder::new(&mut net, seed);
        let in_c = 2 * (3 + k);
        let backbone = b.scoped("disc", |b| Backbone::build(b, cfg.discriminator, in_c, 0, false));
        let head = b.scoped("disc", |b| Conv::build(b, "head", backbone.out_channels(), k, 1, 1, true, None));
        Self {
            net,
            config: *cfg,
            backbone,
            head,
        }
    }

    /// `frame_*`: 1×3×m×n, `h_*`: 1×K×m×n; returns 1×K×m×n.
    pub fn forward(&self, g: &mut Graph, b: &mut Binding, frame_a: Var, h_a: Var, frame_b: Var, h_b: Var) -> Result<Var> {
        let sh = &self.config.shape;
        let (m, n, k) = (sh.m(), sh.n(), sh.joints);
        for (v, c) in [(frame_a, 3), (h_a, k), (frame_b, 3), (h_b, k)] {
            if g.value(v).shape() != [1, c, m, n] {
                return Err(DkdError::Shape(format!(
                    "discriminator input {:?}, expected [1, {c}, {m}, {n}]",
                    g.value(v).shape()
                )));
            }
        }
        b.counts.discriminator += 1;
        let x = g.concat_channels(&[frame_a, h_a, frame_b, h_b])?;
        let y = self.backbone.forward(g, b, x)?;
        self.head.forward(g, b, y)
    }

    pub fn spec(&self) -> ModelSpec {
        let sh = &self.config.shape;
        let mut layers = Vec::new();
        let hw = self.backbone.spec((sh.m(), sh.n()), &mut layers);
        self.head.spec(hw, &mut layers);
        ModelSpec {
            component: "discriminator".into(),
            layers,
        }
    }
}

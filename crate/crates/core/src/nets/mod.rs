//! The four learnable components and their parameter storage.
//!
//! Parameters live in a [`Net`] as named tensors. A forward pass binds a
//! net to a [`Graph`] (one leaf per parameter) through a [`Binding`],
//! which also collects training-mode batch-norm statistics so the running
//! averages can be updated once the forward is done.

mod checkpoint;
mod discriminator;
mod generator;
mod layers;

use dkd_autograd::{BatchStats, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DkdError, Result};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use discriminator::Discriminator;
pub use generator::{Distillator, Generator};
pub use layers::{Backbone, BackboneSize};

pub const NETWORK_STRIDE: usize = 8;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Frame, heatmap and kernel geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    /// K.
    pub joints: usize,
    /// C.
    pub channels: usize,
    /// S.
    pub kernel: usize,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            stride: NETWORK_STRIDE,
            joints: 5,
            channels: 16,
            kernel: 5,
        }
    }
}

impl ShapeConfig {
    pub fn m(&self) -> usize {
        self.height / self.stride
    }

    pub fn n(&self) -> usize {
        self.width / self.stride
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride != NETWORK_STRIDE {
            return Err(DkdError::Config(format!("network stride is fixed at 8, got {}", self.stride)));
        }
        // The backbone halves five times before one 2× deconvolution.
        let unit = 2 * self.stride;
        if self.height == 0 || self.width == 0 || self.height % unit != 0 || self.width % unit != 0 {
            return Err(DkdError::Config(format!(
                "frame {}x{} is not a multiple of 16",
                self.height, self.width
            )));
        }
        if self.joints == 0 || self.channels == 0 {
            return Err(DkdError::Config("joint and channel counts must be positive".into()));
        }
        if self.kernel % 2 == 0 || self.kernel > self.m().min(self.n()) {
            return Err(DkdError::Config(format!(
                "kernel size {} must be odd and at most {}",
                self.kernel,
                self.m().min(self.n())
            )));
        }
        Ok(())
    }
}

/// Everything that fixes the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub shape: ShapeConfig,
    pub initializer: BackboneSize,
    pub encoder: BackboneSize,
    pub discriminator: BackboneSize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            shape: ShapeConfig::default(),
            initializer: BackboneSize::Small,
            encoder: BackboneSize::Tiny,
            discriminator: BackboneSize::Tiny,
        }
    }
}

impl ModelConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plain struct");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BnId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Named parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Net {
    names: Vec<String>,
    params: Vec<Tensor>,
    bn_names: Vec<String>,
    bn: Vec<RunningStats>,
}

/// How a new weight is filled.
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Identity matrix plus normal noise, for square input-major mixes.
    NearIdentity(f64),
}

pub(crate) struct Builder<'a> {
    pub net: &'a mut Net,
    pub rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a> Builder<'a> {
    pub fn new(net: &'a mut Net, seed: u64) -> Self {
        Self {
            net,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("positive std");
                (0..numel).map(|_| d.sample(&mut self.rng)).collect()
            }
            Init::NearIdentity(std) => {
                let c = shape[shape.len() - 1];
                let d = Normal::new(0.0, std).expect("positive std");
                (0..numel)
                    .map(|i| d.sample(&mut self.rng) + if i / c == i % c { 1.0 } else { 0.0 })
                    .collect()
            }
        };
        let name = self.full_name(name);
        self.net.push_param(name, Tensor::new(shape, data).expect("shape matches"))
    }

    pub fn bn_stats(&mut self, channels: usize) -> BnId {
        let name = self.full_name("running");
        self.net.bn_names.push(name);
        self.net.bn.push(RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        });
        BnId(self.net.bn.len() - 1)
    }
}

impl Net {
    fn push_param(&mut self, name: String, t: Tensor) -> ParamId {
        self.names.push(name);
        self.params.push(t);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.params.iter().map(Tensor::shape).collect()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn running(&self, id: BnId) -> &RunningStats {
        &self.bn[id.0]
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_stats(&self) -> &[RunningStats] {
        &self.bn
    }

    pub fn bn_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.bn
    }

    /// Folds batch statistics into the running averages, in order.
    pub fn apply_batch_stats(&mut self, pending: &[(BnId, BatchStats)]) {
        for (id, stats) in pending {
            let r = &mut self.bn[id.0];
            for (rm, m) in r.mean.iter_mut().zip(&stats.mean) {
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
            }
            for (rv, v) in r.var.iter_mut().zip(&stats.var) {
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    /// Batch statistics, recorded for running-average updates.
    Train,
    /// Running statistics.
    Eval,
}

/// How often each component ran during a forward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub initializer: usize,
    pub encoder: usize,
    pub distillator: usize,
    pub matching: usize,
    pub frame_head: usize,
    pub discriminator: usize,
}

/// A net's parameters as leaves of one graph.
pub struct Binding<'n> {
    net: &'n Net,
    vars: Vec<Var>,
    mode: BnMode,
    pending: Vec<(BnId, BatchStats)>,
    pub counts: CallCounts,
}

impl<'n> Binding<'n> {
    pub fn new(g: &mut Graph, net: &'n Net, mode: BnMode) -> Self {
        let vars = net.params.iter().map(|t| g.leaf(t.clone())).collect();
        Self {
            net,
            vars,
            mode,
            pending: Vec::new(),
            counts: CallCounts::default(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Leaves in parameter order, for [`Graph::backward`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn mode(&self) -> BnMode {
        self.mode
    }

    pub(crate) fn batch_norm(&mut self, g: &mut Graph, x: Var, gamma: ParamId, beta: ParamId, stats: BnId) -> Result<Var> {
        let (gv, bv) = (self.var(gamma), self.var(beta));
        Ok(match self.mode {
            BnMode::Train => {
                let (y, s) = g.batch_norm_train(x, gv, bv, BN_EPS)?;
                self.pending.push((stats, s));
                y
            }
            BnMode::Eval => {
                let r = self.net.running(stats);
                g.batch_norm_eval(x, gv, bv, &r.mean, &r.var, BN_EPS)?
            }
        })
    }

    /// Batch statistics gathered so far; apply with [`Net::apply_batch_stats`].
    pub fn take_batch_stats(&mut self) -> Vec<(BnId, BatchStats)> {
        std::mem::take(&mut self.pending)
    }
}

/// Derives independent seeds for the generator and discriminator.
pub(crate) fn sub_seed(seed: u64, salt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Fresh generator and discriminator for `cfg`, a pure function of `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<(Generator, Discriminator)> {
    cfg.shape.validate()?;
    Ok((
        Generator::new(cfg, sub_seed(seed, 1)),
        Discriminator::new(cfg, sub_seed(seed, 2)),
    ))
}

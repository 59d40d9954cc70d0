//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in creation order, which is already a
//! topological order. [`Graph::backward`] walks the tape in reverse and only
//! visits nodes that lie on a path from one of the requested leaves to the
//! root, so two backward passes over one tape (e.g. generator and
//! discriminator losses) each pay only for their own sub-graph.

use crate::error::{GraphError, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-average updates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        geom: ConvGeom,
        cols: Vec<f64>,
        pointwise: bool,
    },
    ConvTranspose2d {
        geom: ConvGeom,
    },
    PointwiseIo,
    DepthwiseCorr {
        s: usize,
    },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu,
    MaxPool {
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool,
    Concat {
        channels: Vec<usize>,
    },
    Add,
    Sub,
    Scale(f64),
    Mse,
    DotConst(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<usize>,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(GraphError::Shape(msg.into()))
}

impl Graph {
    /// A graph that keeps everything needed for [`Graph::backward`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A forward-only graph: ops skip their backward buffers.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, Vec::new())
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<usize>) -> Var {
        self.nodes.push(Node { value, op, inputs });
        Var(self.nodes.len() - 1)
    }

    /// 2-D convolution (cross-correlation). `x`: N×Ci×H×W, `w`: Co×Ci×k×k, `b`: Co.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, ci, h, wd) = self.value(x).dims4()?;
        let (co, wci, k, k2) = self.value(w).dims4()?;
        if wci != ci || k != k2 {
            return shape_err(format!(
                "conv2d weight {:?} vs input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return shape_err(format!("conv2d bias {:?}, expected [{co}]", self.value(b).shape()));
            }
        }
        let (Some(ho), Some(wo)) = (
            kernels::conv_out_size(h, k, stride, pad),
            kernels::conv_out_size(wd, k, stride, pad),
        ) else {
            return shape_err(format!("conv2d kernel {k} does not fit input {h}x{wd}"));
        };
        let geom = ConvGeom {
            c: ci,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let pointwise = k == 1 && stride == 1 && pad == 0;
        let rows = geom.col_rows();
        let plane = geom.col_cols();
        let mut out = vec![0.0; n * co * plane];
        let keep = self.record && !pointwise;
        let mut cols = if keep { vec![0.0; n * rows * plane] } else { Vec::new() };
        let mut scratch = if !keep && !pointwise { vec![0.0; rows * plane] } else { Vec::new() };
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                let xs = &xv[s * ci * h * wd..(s + 1) * ci * h * wd];
                let col: &[f64] = if pointwise {
                    xs
                } else {
                    let buf = if keep {
                        &mut cols[s * rows * plane..(s + 1) * rows * plane]
                    } else {
                        &mut scratch[..]
                    };
                    kernels::im2col(xs, &geom, buf);
                    buf
                };
                let os = &mut out[s * co * plane..(s + 1) * co * plane];
                kernels::gemm(co, rows, plane, wv, false, col, false, os, 0.0);
            }
            if let Some(b) = b {
                add_channel_bias(&mut out, self.value(b).data(), n, co, plane);
            }
        }
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        let value = Tensor::new(&[n, co, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { geom, cols, pointwise }, inputs))
    }

    /// 1×1 convolution with an input-major weight `w`: 1×1×Ci×Co (HWIO).
    pub fn pointwise_io(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, ci, h, wd) = self.value(x).dims4()?;
        let (kh, kw, wci, co) = self.value(w).dims4()?;
        if (kh, kw, wci) != (1, 1, ci) {
            return shape_err(format!(
                "pointwise weight {:?} vs input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            ));
        }
        let plane = h * wd;
        let mut out = vec![0.0; n * co * plane];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                let xs = &xv[s * ci * plane..(s + 1) * ci * plane];
                kernels::gemm(co, ci, plane, wv, true, xs, false, &mut out[s * co * plane..(s + 1) * co * plane], 0.0);
            }
        }
        let value = Tensor::new(&[n, co, h, wd], out)?;
        Ok(self.push(value, Op::PointwiseIo, vec![x.0, w.0]))
    }

    /// Transposed convolution. `x`: N×Ci×H×W, `w`: Ci×Co×k×k, `b`: Co.
    ///
    /// Output size is `(H−1)·stride − 2·pad + k + out_pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let (n, ci, h, wd) = self.value(x).dims4()?;
        let (wci, co, k, k2) = self.value(w).dims4()?;
        if wci != ci || k != k2 || out_pad >= stride.max(1) {
            return shape_err(format!(
                "conv_transpose2d weight {:?} vs input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return shape_err(format!("conv_transpose2d bias shape {:?}", self.value(b).shape()));
            }
        }
        let full_h = (h - 1) * stride + k + out_pad;
        let full_w = (wd - 1) * stride + k + out_pad;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return shape_err("conv_transpose2d padding larger than output");
        }
        let (ho, wo) = (full_h - 2 * pad, full_w - 2 * pad);
        // The conv that maps the output back onto the input grid.
        let geom = ConvGeom {
            c: co,
            h: ho,
            w: wo,
            k,
            stride,
            pad,
            ho: h,
            wo: wd,
        };
        let rows = geom.col_rows();
        let plane = h * wd;
        let mut out = vec![0.0; n * co * ho * wo];
        let mut col = vec![0.0; rows * plane];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                let xs = &xv[s * ci * plane..(s + 1) * ci * plane];
                kernels::gemm(rows, ci, plane, wv, true, xs, false, &mut col, 0.0);
                kernels::col2im(&col, &geom, &mut out[s * co * ho * wo..(s + 1) * co * ho * wo]);
            }
            if let Some(b) = b {
                add_channel_bias(&mut out, self.value(b).data(), n, co, ho * wo);
            }
        }
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        let value = Tensor::new(&[n, co, ho, wo], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { geom }, inputs))
    }

    /// Per-sample, per-channel S×S correlation with "same" zero padding.
    /// `x`: N×C×H×W, `kern`: N×C×S×S with S odd.
    pub fn depthwise_corr(&mut self, x: Var, kern: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (kn, kc, s, s2) = self.value(kern).dims4()?;
        if kn != n || kc != c || s != s2 || s % 2 == 0 {
            return shape_err(format!(
                "depthwise kernel {:?} vs input {:?} (kernel must be N×C×S×S, S odd)",
                self.value(kern).shape(),
                self.value(x).shape()
            ));
        }
        let plane = c * h * w;
        let mut out = Vec::with_capacity(n * plane);
        {
            let xv = self.value(x).data();
            let kv = self.value(kern).data();
            for i in 0..n {
                out.extend(kernels::depthwise_corr(
                    &xv[i * plane..(i + 1) * plane],
                    &kv[i * c * s * s..(i + 1) * c * s * s],
                    c,
                    h,
                    w,
                    s,
                ));
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::DepthwiseCorr { s }, vec![x.0, kern.0]))
    }

    /// Batch norm with batch statistics over N·H·W per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        self.check_affine(gamma, beta, c)?;
        let count = n * h * w;
        let plane = h * w;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            for s in 0..n {
                sum += xv[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter().sum::<f64>();
            }
            let m = sum / count as f64;
            let mut sq = 0.0;
            for s in 0..n {
                sq += xv[(s * c + ch) * plane..(s * c + ch + 1) * plane]
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = sq / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (value, xhat) = self.normalize(x, gamma, beta, &mean, &inv_std)?;
        let unbiased = if count > 1 {
            var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect()
        } else {
            var.clone()
        };
        let xhat = if self.record { xhat } else { Vec::new() };
        let out = self.push(
            value,
            Op::BatchNorm {
                xhat,
                inv_std,
                train: true,
            },
            vec![x.0, gamma.0, beta.0],
        );
        Ok((out, BatchStats { mean, var: unbiased }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, c, _, _) = self.value(x).dims4()?;
        self.check_affine(gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return shape_err("batch_norm_eval running stats length");
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (value, xhat) = self.normalize(x, gamma, beta, running_mean, &inv_std)?;
        let xhat = if self.record { xhat } else { Vec::new() };
        Ok(self.push(
            value,
            Op::BatchNorm {
                xhat,
                inv_std,
                train: false,
            },
            vec![x.0, gamma.0, beta.0],
        ))
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return shape_err(format!(
                "batch norm affine shapes {:?}/{:?}, expected [{c}]",
                self.value(gamma).shape(),
                self.value(beta).shape()
            ));
        }
        Ok(())
    }

    fn normalize(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64]) -> Result<(Tensor, Vec<f64>)> {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        let plane = h * w;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xt.numel()];
        let mut out = vec![0.0; xt.numel()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (xt.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        Ok((Tensor::new(xt.shape(), out)?, xhat))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(xt.shape(), data).expect("same shape");
        self.push(value, Op::Relu, vec![x.0])
    }

    /// Max pooling with a square window, no padding, floor output size.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (Some(ho), Some(wo)) = (
            kernels::conv_out_size(h, k, stride, 0),
            kernels::conv_out_size(w, k, stride, 0),
        ) else {
            return shape_err(format!("max_pool2d window {k} larger than {h}x{w}"));
        };
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for sc in 0..n * c {
            let base = sc * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        let argmax = if self.record { argmax } else { Vec::new() };
        Ok(self.push(value, Op::MaxPool { argmax }, vec![x.0]))
    }

    /// Average pooling onto an exact `oh×ow` grid with (possibly overlapping)
    /// bins `[⌊i·H/oh⌋, ⌈(i+1)·H/oh⌉)`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return shape_err("adaptive_avg_pool2d on empty extent");
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for sc in 0..n * c {
            let base = sc * h * w;
            for oy in 0..oh {
                let (y0, y1) = kernels::adaptive_bin(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = kernels::adaptive_bin(ox, w, ow);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        acc += xv[base + y * w + x0..base + y * w + x1].iter().sum::<f64>();
                    }
                    out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::AdaptiveAvgPool, vec![x.0]))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat of zero tensors");
        };
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(xs.len());
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return shape_err(format!(
                    "concat {:?} with {:?}",
                    self.value(first).shape(),
                    self.value(v).shape()
                ));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for s in 0..n {
            for (&v, &c) in xs.iter().zip(&channels) {
                out.extend_from_slice(&self.value(v).data()[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let value = Tensor::new(&[n, total, h, w], out)?;
        Ok(self.push(value, Op::Concat { channels }, xs.iter().map(|v| v.0).collect()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Sub, |x, y| x - y)
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("elementwise {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, op, vec![a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(xt.shape(), data).expect("same shape");
        self.push(value, Op::Scale(c), vec![x.0])
    }

    /// Mean squared error over all elements, as a one-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("mse {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let sum: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(sum / ta.numel() as f64);
        Ok(self.push(value, Op::Mse, vec![a.0, b.0]))
    }

    /// `Σ x_i · w_i` for constant weights `w`.
    pub fn dot_const(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let xt = self.value(x);
        if xt.numel() != weights.len() {
            return shape_err(format!("dot_const {} weights for {} elements", weights.len(), xt.numel()));
        }
        let value = Tensor::scalar(xt.data().iter().zip(&weights).map(|(a, b)| a * b).sum());
        Ok(self.push(value, Op::DotConst(weights), vec![x.0]))
    }

    /// Gradients of the one-element `root` w.r.t. each of `wrt`.
    ///
    /// Leaves that `root` does not depend on get all-zero gradients.
    pub fn backward(&self, root: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(GraphError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let upto = root.0 + 1;
        let mut reach = vec![false; upto];
        let mut slot = vec![usize::MAX; upto];
        for (i, v) in wrt.iter().enumerate() {
            if v.0 < upto {
                reach[v.0] = true;
                slot[v.0] = i;
            }
        }
        for i in 0..upto {
            if !reach[i] && self.nodes[i].inputs.iter().any(|&j| reach[j]) {
                reach[i] = true;
            }
        }
        let mut out: Vec<Tensor> = wrt.iter().map(|v| Tensor::zeros(self.value(*v).shape())).collect();
        if !reach[root.0] {
            return Ok(out);
        }
        if !self.record {
            return shape_err("backward on an inference graph");
        }
        let mut grads: Vec<Option<Tensor>> = (0..upto).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_val.shape(), 1.0));
        for i in (0..upto).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if slot[i] != usize::MAX {
                out[slot[i]].add_assign(&g);
            }
            let node = &self.nodes[i];
            let input_grads = self.op_backward(node, &g, &reach)?;
            for (&j, gj) in node.inputs.iter().zip(input_grads) {
                let Some(gj) = gj else { continue };
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&gj),
                    empty => *empty = Some(gj),
                }
            }
        }
        Ok(out)
    }

    fn op_backward(&self, node: &Node, g: &Tensor, reach: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let need: Vec<bool> = node.inputs.iter().map(|&j| reach[j]).collect();
        let input = |k: usize| &self.nodes[node.inputs[k]].value;
        let gd = g.data();
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { geom, cols, pointwise } => {
                let x = input(0);
                let w = input(1);
                let (n, ci, h, wd) = x.dims4()?;
                let co = w.shape()[0];
                let rows = geom.col_rows();
                let plane = geom.col_cols();
                let mut dx = need[0].then(|| vec![0.0; x.numel()]);
                let mut dw = need[1].then(|| vec![0.0; w.numel()]);
                let mut dcol = vec![0.0; rows * plane];
                let mut scratch = Vec::new();
                for s in 0..n {
                    let dys = &gd[s * co * plane..(s + 1) * co * plane];
                    let xs = &x.data()[s * ci * h * wd..(s + 1) * ci * h * wd];
                    if let Some(dw) = dw.as_mut() {
                        let col: &[f64] = if *pointwise {
                            xs
                        } else if !cols.is_empty() {
                            &cols[s * rows * plane..(s + 1) * rows * plane]
                        } else {
                            scratch.resize(rows * plane, 0.0);
                            kernels::im2col(xs, geom, &mut scratch);
                            &scratch
                        };
                        kernels::gemm(co, plane, rows, dys, false, col, true, dw, 1.0);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxs = &mut dx[s * ci * h * wd..(s + 1) * ci * h * wd];
                        if *pointwise {
                            kernels::gemm(rows, co, plane, w.data(), true, dys, false, dxs, 0.0);
                        } else {
                            kernels::gemm(rows, co, plane, w.data(), true, dys, false, &mut dcol, 0.0);
                            kernels::col2im(&dcol, geom, dxs);
                        }
                    }
                }
                let mut res = vec![
                    dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
                    dw.map(|d| Tensor::new(w.shape(), d)).transpose()?,
                ];
                if node.inputs.len() == 3 {
                    res.push(need[2].then(|| channel_sums(gd, n, co, plane)));
                }
                res
            }
            Op::ConvTranspose2d { geom } => {
                let x = input(0);
                let w = input(1);
                let (n, ci, h, wd) = x.dims4()?;
                let co = geom.c;
                let rows = geom.col_rows();
                let plane = h * wd;
                let out_plane = geom.h * geom.w;
                let mut dx = need[0].then(|| vec![0.0; x.numel()]);
                let mut dw = need[1].then(|| vec![0.0; w.numel()]);
                let mut dcol = vec![0.0; rows * plane];
                for s in 0..n {
                    kernels::im2col(&gd[s * co * out_plane..(s + 1) * co * out_plane], geom, &mut dcol);
                    if let Some(dx) = dx.as_mut() {
                        let dxs = &mut dx[s * ci * plane..(s + 1) * ci * plane];
                        kernels::gemm(ci, rows, plane, w.data(), false, &dcol, false, dxs, 0.0);
                    }
                    if let Some(dw) = dw.as_mut() {
                        let xs = &x.data()[s * ci * plane..(s + 1) * ci * plane];
                        kernels::gemm(ci, plane, rows, xs, false, &dcol, true, dw, 1.0);
                    }
                }
                let mut res = vec![
                    dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
                    dw.map(|d| Tensor::new(w.shape(), d)).transpose()?,
                ];
                if node.inputs.len() == 3 {
                    res.push(need[2].then(|| channel_sums(gd, n, co, out_plane)));
                }
                res
            }
            Op::PointwiseIo => {
                let x = input(0);
                let w = input(1);
                let (n, ci, h, wd) = x.dims4()?;
                let co = w.shape()[3];
                let plane = h * wd;
                let mut dx = need[0].then(|| vec![0.0; x.numel()]);
                let mut dw = need[1].then(|| vec![0.0; w.numel()]);
                for s in 0..n {
                    let dys = &gd[s * co * plane..(s + 1) * co * plane];
                    if let Some(dx) = dx.as_mut() {
                        kernels::gemm(ci, co, plane, w.data(), false, dys, false, &mut dx[s * ci * plane..(s + 1) * ci * plane], 0.0);
                    }
                    if let Some(dw) = dw.as_mut() {
                        let xs = &x.data()[s * ci * plane..(s + 1) * ci * plane];
                        kernels::gemm(ci, plane, co, xs, false, dys, true, dw, 1.0);
                    }
                }
                vec![
                    dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
                    dw.map(|d| Tensor::new(w.shape(), d)).transpose()?,
                ]
            }
            Op::DepthwiseCorr { s } => {
                let x = input(0);
                let k = input(1);
                let (n, c, h, w) = x.dims4()?;
                let plane = c * h * w;
                let kplane = c * s * s;
                let mut dx = Vec::with_capacity(x.numel());
                let mut dk = Vec::with_capacity(k.numel());
                for i in 0..n {
                    let (a, b) = kernels::depthwise_corr_backward(
                        &x.data()[i * plane..(i + 1) * plane],
                        &k.data()[i * kplane..(i + 1) * kplane],
                        &gd[i * plane..(i + 1) * plane],
                        c,
                        h,
                        w,
                        *s,
                    );
                    dx.extend(a);
                    dk.extend(b);
                }
                vec![
                    need[0].then(|| Tensor::new(x.shape(), dx)).transpose()?,
                    need[1].then(|| Tensor::new(k.shape(), dk)).transpose()?,
                ]
            }
            Op::BatchNorm { xhat, inv_std, train } => {
                let x = input(0);
                let gamma = input(1).data();
                let (n, c, h, w) = x.dims4()?;
                let plane = h * w;
                let count = (n * plane) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for i in base..base + plane {
                            dbeta[ch] += gd[i];
                            dgamma[ch] += gd[i] * xhat[i];
                        }
                    }
                }
                let dx = need[0].then(|| {
                    let mut dx = vec![0.0; x.numel()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * plane;
                            let scale = gamma[ch] * inv_std[ch];
                            for i in base..base + plane {
                                dx[i] = if *train {
                                    scale * (gd[i] - dbeta[ch] / count - xhat[i] * dgamma[ch] / count)
                                } else {
                                    scale * gd[i]
                                };
                            }
                        }
                    }
                    dx
                });
                vec![
                    dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
                    need[1].then(|| Tensor::new(&[c], dgamma)).transpose()?,
                    need[2].then(|| Tensor::new(&[c], dbeta)).transpose()?,
                ]
            }
            Op::Relu => {
                let y = node.value.data();
                let dx = gd.iter().zip(y).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect();
                vec![Some(Tensor::new(g.shape(), dx)?)]
            }
            Op::MaxPool { argmax } => {
                let x = input(0);
                let mut dx = vec![0.0; x.numel()];
                for (gi, &src) in gd.iter().zip(argmax) {
                    dx[src] += gi;
                }
                vec![Some(Tensor::new(x.shape(), dx)?)]
            }
            Op::AdaptiveAvgPool => {
                let x = input(0);
                let (n, c, h, w) = x.dims4()?;
                let (_, _, oh, ow) = node.value.dims4()?;
                let mut dx = vec![0.0; x.numel()];
                for sc in 0..n * c {
                    let base = sc * h * w;
                    for oy in 0..oh {
                        let (y0, y1) = kernels::adaptive_bin(oy, h, oh);
                        for ox in 0..ow {
                            let (x0, x1) = kernels::adaptive_bin(ox, w, ow);
                            let share = gd[(sc * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                            for y in y0..y1 {
                                for v in &mut dx[base + y * w + x0..base + y * w + x1] {
                                    *v += share;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(x.shape(), dx)?)]
            }
            Op::Concat { channels } => {
                let (n, total, h, w) = node.value.dims4()?;
                let plane = h * w;
                let mut res = Vec::with_capacity(channels.len());
                let mut offset = 0;
                for (k, &c) in channels.iter().enumerate() {
                    if need[k] {
                        let mut d = Vec::with_capacity(n * c * plane);
                        for s in 0..n {
                            let start = (s * total + offset) * plane;
                            d.extend_from_slice(&gd[start..start + c * plane]);
                        }
                        res.push(Some(Tensor::new(&[n, c, h, w], d)?));
                    } else {
                        res.push(None);
                    }
                    offset += c;
                }
                res
            }
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => {
                let neg = gd.iter().map(|v| -v).collect();
                vec![Some(g.clone()), Some(Tensor::new(g.shape(), neg)?)]
            }
            Op::Scale(c) => {
                let d = gd.iter().map(|v| v * c).collect();
                vec![Some(Tensor::new(g.shape(), d)?)]
            }
            Op::Mse => {
                let a = input(0);
                let b = input(1);
                let k = 2.0 * gd[0] / a.numel() as f64;
                let da: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| k * (x - y)).collect();
                let db = da.iter().map(|v| -v).collect();
                vec![
                    Some(Tensor::new(a.shape(), da)?),
                    Some(Tensor::new(b.shape(), db)?),
                ]
            }
            Op::DotConst(weights) => {
                let x = input(0);
                let d = weights.iter().map(|w| w * gd[0]).collect();
                vec![Some(Tensor::new(x.shape(), d)?)]
            }
        })
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], n: usize, c: usize, plane: usize) {
    for s in 0..n {
        for (ch, b) in bias.iter().enumerate().take(c) {
            for v in &mut out[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                *v += b;
            }
        }
    }
}

fn channel_sums(g: &[f64], n: usize, c: usize, plane: usize) -> Tensor {
    let mut sums = vec![0.0; c];
    for s in 0..n {
        for (ch, acc) in sums.iter_mut().enumerate() {
            *acc += g[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter().sum::<f64>();
        }
    }
    Tensor::new(&[c], sums).expect("length c")
}

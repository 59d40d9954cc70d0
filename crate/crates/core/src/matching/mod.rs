//! Dynamic convolution with factorized pose kernels.
//!
//! Features `f` (C×m×n) are matched against kernel bases `k′` (C×S×S) via
//! a 1×1 mix `V`, a per-channel S×S correlation with `k′` and a 1×1
//! projection `U` onto K joints, followed by batch norm. The composite
//! equals one dense S×S×C×K convolution with kernels
//! `k[j, c′] = Σ_c U[j, c] · V[c, c′] · k′[c]`.
//!
//! `U` and `V` are stored input-major (HWIO): `u[c·K + j] = U[j, c]` with
//! shape 1×1×C×K, and `v[c′·C + c] = V[c, c′]` with shape 1×1×C×C.

use dkd_autograd::{Graph, Var};
use num_traits::Float;

use crate::error::{DkdError, Result};

/// Channel-major planes, C×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Float> Planes<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(DkdError::Shape(format!(
                "{channels}x{height}x{width} planes need {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn cast<U: Float>(&self) -> Planes<U> {
        Planes {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from(*v).expect("finite cast")).collect(),
        }
    }
}

/// Dense per-joint kernels, K×C×S×S.
#[derive(Clone, Debug, PartialEq)]
pub struct FullPoseKernels<T> {
    pub joints: usize,
    pub channels: usize,
    pub size: usize,
    pub data: Vec<T>,
}

impl<T: Float> FullPoseKernels<T> {
    pub fn at(&self, j: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((j * self.channels + c) * self.size + y) * self.size + x]
    }
}

/// Batch norm applied to the matched maps.
#[derive(Clone, Debug)]
pub enum MatchNorm<'a, T> {
    /// Raw correlation output.
    Skip,
    /// Running statistics.
    Running {
        gamma: &'a [T],
        beta: &'a [T],
        mean: &'a [T],
        var: &'a [T],
        eps: T,
    },
    /// Statistics of the output itself.
    Batch { gamma: &'a [T], beta: &'a [T], eps: T },
}

fn check_coeffs(c: usize, k: usize, u: &[impl Copy], v: &[impl Copy]) -> Result<()> {
    if u.len() != c * k || v.len() != c * c {
        return Err(DkdError::Shape(format!(
            "coefficients need U 1x1x{c}x{k} and V 1x1x{c}x{c}, got {} and {} values",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

fn check_bases<T>(f: &Planes<T>, kb: &Planes<T>) -> Result<usize> {
    let s = kb.height;
    if kb.channels != f.channels || kb.width != s {
        return Err(DkdError::Shape(format!(
            "kernel bases {}x{}x{} do not fit {} feature channels",
            kb.channels, kb.height, kb.width, f.channels
        )));
    }
    if s % 2 == 0 {
        return Err(DkdError::Shape(format!("kernel size {s} must be odd")));
    }
    Ok(s)
}

/// Zero-padded "same" correlation of one plane with one S×S kernel, added into `out`.
fn corr_plane_add<T: Float>(x: &[T], kern: &[T], weight: T, h: usize, w: usize, s: usize, out: &mut [T]) {
    let p = (s / 2) as isize;
    for y in 0..h {
        for xx in 0..w {
            let mut acc = T::zero();
            for ky in 0..s {
                let iy = y as isize + ky as isize - p;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..s {
                    let ix = xx as isize + kx as isize - p;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    acc = acc + kern[ky * s + kx] * x[iy as usize * w + ix as usize];
                }
            }
            out[y * w + xx] = out[y * w + xx] + weight * acc;
        }
    }
}

/// Matches features against factorized kernels: V mix, depthwise
/// correlation with `kb`, U projection, then `norm`. Output is K×H×W.
pub fn apply_pose_kernels<T: Float>(f: &Planes<T>, kb: &Planes<T>, u: &[T], v: &[T], norm: MatchNorm<'_, T>) -> Result<Planes<T>> {
    let c = f.channels;
    let s = check_bases(f, kb)?;
    if c == 0 || u.len() % c != 0 {
        return Err(DkdError::Shape(format!("U has {} values for {c} channels", u.len())));
    }
    let k = u.len() / c;
    check_coeffs(c, k, u, v)?;
    let (h, w) = (f.height, f.width);
    let hw = h * w;

    let mut mixed = vec![T::zero(); c * hw];
    for ci in 0..c {
        for co in 0..c {
            let wgt = v[ci * c + co];
            let (src, dst) = (&f.data[ci * hw..(ci + 1) * hw], &mut mixed[co * hw..(co + 1) * hw]);
            for (d, x) in dst.iter_mut().zip(src) {
                *d = *d + wgt * *x;
            }
        }
    }
    let mut corr = vec![T::zero(); c * hw];
    for ch in 0..c {
        corr_plane_add(
            &mixed[ch * hw..(ch + 1) * hw],
            &kb.data[ch * s * s..(ch + 1) * s * s],
            T::one(),
            h,
            w,
            s,
            &mut corr[ch * hw..(ch + 1) * hw],
        );
    }
    let mut out = vec![T::zero(); k * hw];
    for ch in 0..c {
        for j in 0..k {
            let wgt = u[ch * k + j];
            let (src, dst) = (&corr[ch * hw..(ch + 1) * hw], &mut out[j * hw..(j + 1) * hw]);
            for (d, x) in dst.iter_mut().zip(src) {
                *d = *d + wgt * *x;
            }
        }
    }
    let mut maps = Planes::new(k, h, w, out)?;
    normalize(&mut maps, norm)?;
    Ok(maps)
}

fn normalize<T: Float>(maps: &mut Planes<T>, norm: MatchNorm<'_, T>) -> Result<()> {
    let (k, hw) = (maps.channels, maps.height * maps.width);
    let (gamma, beta, stats, eps) = match norm {
        MatchNorm::Skip => return Ok(()),
        MatchNorm::Running { gamma, beta, mean, var, eps } => {
            (gamma, beta, mean.iter().zip(var).map(|(m, v)| (*m, *v)).collect::<Vec<_>>(), eps)
        }
        MatchNorm::Batch { gamma, beta, eps } => {
            let n = T::from(hw).expect("count");
            let stats = (0..k)
                .map(|j| {
                    let p = maps.plane(j);
                    let mean = p.iter().fold(T::zero(), |a, v| a + *v) / n;
                    let var = p.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / n;
                    (mean, var)
                })
                .collect();
            (gamma, beta, stats, eps)
        }
    };
    if gamma.len() != k || beta.len() != k || stats.len() != k {
        return Err(DkdError::Shape(format!("batch norm parameters do not cover {k} channels")));
    }
    for j in 0..k {
        let (mean, var) = stats[j];
        let scale = gamma[j] / (var + eps).sqrt();
        for x in &mut maps.data[j * hw..(j + 1) * hw] {
            *x = (*x - mean) * scale + beta[j];
        }
    }
    Ok(())
}

/// Expands bases and coefficients into dense per-joint kernels.
pub fn materialize_full_kernels<T: Float>(kb: &Planes<T>, u: &[T], v: &[T]) -> Result<FullPoseKernels<T>> {
    let (c, s) = (kb.channels, kb.height);
    if kb.width != s || c == 0 || u.len() % c != 0 {
        return Err(DkdError::Shape(format!("bases {c}x{s}x{} with {} U values", kb.width, u.len())));
    }
    let k = u.len() / c;
    check_coeffs(c, k, u, v)?;
    let ss = s * s;
    let mut data = vec![T::zero(); k * c * ss];
    for j in 0..k {
        for cp in 0..c {
            let dst = &mut data[(j * c + cp) * ss..(j * c + cp + 1) * ss];
            for ch in 0..c {
                let coeff = u[ch * k + j] * v[cp * c + ch];
                for (d, b) in dst.iter_mut().zip(&kb.data[ch * ss..(ch + 1) * ss]) {
                    *d = *d + coeff * *b;
                }
            }
        }
    }
    Ok(FullPoseKernels {
        joints: k,
        channels: c,
        size: s,
        data,
    })
}

/// Direct sliding-window correlation with dense kernels, zero padding.
pub fn oracle_match<T: Float>(f: &Planes<T>, kernels: &FullPoseKernels<T>) -> Result<Planes<T>> {
    let (c, s) = (kernels.channels, kernels.size);
    if f.channels != c || s % 2 == 0 {
        return Err(DkdError::Shape(format!(
            "{c}-channel kernels of size {s} against {}-channel features",
            f.channels
        )));
    }
    let (h, w) = (f.height, f.width);
    let p = (s / 2) as isize;
    let mut out = Planes::zeros(kernels.joints, h, w);
    for j in 0..kernels.joints {
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for ch in 0..c {
                    for sy in 0..s {
                        for sx in 0..s {
                            let (iy, ix) = (y as isize + sy as isize - p, x as isize + sx as isize - p);
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc = acc + kernels.at(j, ch, sy, sx) * f.at(ch, iy as usize, ix as usize);
                        }
                    }
                }
                out.data[(j * h + y) * w + x] = acc;
            }
        }
    }
    Ok(out)
}

/// Differentiable matching before batch norm. `f`: 1×C×m×n, `kb`: 1×C×S×S,
/// `u`: 1×1×C×K, `v`: 1×1×C×C.
pub fn match_graph(g: &mut Graph, f: Var, kb: Var, u: Var, v: Var) -> Result<Var> {
    let mixed = g.pointwise_io(f, v)?;
    let corr = g.depthwise_corr(mixed, kb)?;
    Ok(g.pointwise_io(corr, u)?)
}

//! Slice-level compute kernels shared by the graph ops.
//!
//! Every function here works on one sample (CHW) at a time.

use num_traits::Float;

/// `c[m×n] = op(a)[m×k] · op(b)[k×n] + beta · c`, row-major operands.
///
/// With `a_t` set, `a` is stored as `k×m`; with `b_t` set, `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // elements of the three slices, whose lengths were checked.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Geometry of a square-kernel convolution over one CHW sample.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn src_index(&self, o: usize, kk: usize, size: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < size).then_some(i as usize)
    }
}

/// Unfolds `x` (C×H×W) into `col` ((C·k·k)×(Ho·Wo)).
pub fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let plane = g.ho * g.wo;
    debug_assert_eq!(col.len(), g.col_rows() * plane);
    for ci in 0..g.c {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    match g.src_index(oy, ki, g.h) {
                        None => drow.fill(0.0),
                        Some(iy) => {
                            let xrow = &xc[iy * g.w..(iy + 1) * g.w];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                *d = match g.src_index(ox, kj, g.w) {
                                    Some(ix) => xrow[ix],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Folds `col` back onto `x`, accumulating overlapping windows. Adjoint of [`im2col`].
pub fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.c {
        let xc = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let Some(iy) = g.src_index(oy, ki, g.h) else {
                        continue;
                    };
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    let xrow = &mut xc[iy * g.w..(iy + 1) * g.w];
                    for (ox, s) in srow.iter().enumerate() {
                        if let Some(ix) = g.src_index(ox, kj, g.w) {
                            xrow[ix] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel S×S cross-correlation with zero "same" padding.
///
/// `x` is C×H×W, `kern` is C×S×S with S odd; output is C×H×W.
pub fn depthwise_corr<T: Float>(x: &[T], kern: &[T], c: usize, h: usize, w: usize, s: usize) -> Vec<T> {
    let mut y = vec![T::zero(); c * h * w];
    let p = (s / 2) as isize;
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        let yc = &mut y[ch * h * w..(ch + 1) * h * w];
        for a in 0..s {
            let dy = a as isize - p;
            let (i0, i1) = valid_range(h, dy);
            for b in 0..s {
                let dx = b as isize - p;
                let (j0, j1) = valid_range(w, dx);
                let kv = kern[(ch * s + a) * s + b];
                for i in i0..i1 {
                    let si = (i as isize + dy) as usize;
                    let xrow = &xc[si * w..(si + 1) * w];
                    let yrow = &mut yc[i * w..(i + 1) * w];
                    for j in j0..j1 {
                        let sj = (j as isize + dx) as usize;
                        yrow[j] = yrow[j] + kv * xrow[sj];
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`depthwise_corr`] w.r.t. its input and kernel.
pub fn depthwise_corr_backward(
    x: &[f64],
    kern: &[f64],
    dy: &[f64],
    c: usize,
    h: usize,
    w: usize,
    s: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kern.len()];
    let p = (s / 2) as isize;
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        let gc = &dy[ch * h * w..(ch + 1) * h * w];
        let dxc = &mut dx[ch * h * w..(ch + 1) * h * w];
        for a in 0..s {
            let oy = a as isize - p;
            let (i0, i1) = valid_range(h, oy);
            for b in 0..s {
                let ox = b as isize - p;
                let (j0, j1) = valid_range(w, ox);
                let ki = (ch * s + a) * s + b;
                let kv = kern[ki];
                let mut acc = 0.0;
                for i in i0..i1 {
                    let si = (i as isize + oy) as usize;
                    for j in j0..j1 {
                        let sj = (j as isize + ox) as usize;
                        let g = gc[i * w + j];
                        acc += g * xc[si * w + sj];
                        dxc[si * w + sj] += g * kv;
                    }
                }
                dk[ki] += acc;
            }
        }
    }
    (dx, dk)
}

/// Output rows `i` for which `i + offset` stays inside `0..len`.
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Bin `[start, end)` of adaptive pooling for output index `i`.
pub fn adaptive_bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = (i * input) / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

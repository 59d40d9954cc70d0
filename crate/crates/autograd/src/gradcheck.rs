//! Central finite differences for checking analytic gradients.

use crate::tensor::Tensor;

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for the flat index `i`.
pub fn central_difference(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, i: usize, eps: f64) -> f64 {
    let mut probe = x.clone();
    probe.data_mut()[i] = x.data()[i] + eps;
    let plus = f(&probe);
    probe.data_mut()[i] = x.data()[i] - eps;
    let minus = f(&probe);
    (plus - minus) / (2.0 * eps)
}

/// Relative error with an absolute floor so near-zero gradients do not blow up.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

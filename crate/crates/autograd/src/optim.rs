//! RMSprop over a flat list of parameter tensors.

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub alpha: f64,
    pub eps: f64,
    /// Running mean of squared gradients, one per parameter tensor.
    pub square_avg: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            alpha: 0.99,
            eps: 1e-8,
            square_avg: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Moves each parameter against its gradient (or along it when
    /// `ascend` is set) with step size `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64, ascend: bool) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.square_avg.len());
        let sign = if ascend { 1.0 } else { -1.0 };
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.square_avg) {
            for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.alpha * *vi + (1.0 - self.alpha) * gi * gi;
                *pi += sign * lr * gi / (vi.sqrt() + self.eps);
            }
        }
    }
}

//! Reverse-mode automatic differentiation for the small convolutional
//! networks used by the pose model: convolutions, transposed convolutions,
//! per-sample depthwise correlation, batch norm, pooling and MSE.
//!
//! Everything runs single-threaded in `f64`, so results are bitwise
//! reproducible for a given sequence of ops.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod tensor;

pub use error::{GraphError, Result};
pub use graph::{BatchStats, Graph, Var};
pub use optim::RmsProp;
pub use tensor::Tensor;

//! Pose estimation in video by distilling per-frame pose kernels from the
//! previous frame's confidence maps, trained with a temporally adversarial
//! discriminator.

pub mod data;
pub mod error;
pub mod infer;
pub mod matching;
pub mod metrics;
pub mod nets;
pub mod train;

pub use error::{DkdError, Result};

//! Training: losses, the λ controller, the per-clip step and the epoch loop.

mod config;
mod fit;
mod loss;
mod step;

pub use config::{Ablation, TrainConfig};
pub use fit::{FitOptions, FitSummary};
pub use loss::{discriminator_loss, generator_loss, l2, lambda_update, ChangeMap, ChangeRole, LambdaState};
pub use step::{forward_clip, StepReport, Trainer};

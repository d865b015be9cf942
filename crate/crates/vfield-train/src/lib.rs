//! Training: query sampling, the uncertainty-weighted field loss,
//! AdamW with global-norm clipping, the pretraining step/loop, a
//! finite-difference gradient audit, and neural-ODE finetuning.

pub mod finetune;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod queries;
pub mod step;

pub use finetune::{finetune, FinetuneConfig, FinetuneEpoch, FinetuneOutcome};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{item_loss, LossNodes};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use queries::sample_query_locations;
pub use step::{train, train_step, StepMetrics, TrainConfig, TrainError};

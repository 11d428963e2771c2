//! Token-mean likelihood training with Nesterov momentum and a
//! validation-driven learning-rate schedule.

mod config;
mod curve;
mod fit;
mod loss;
mod optim;

pub use config::{ScheduleMode, TrainConfig};
pub use curve::{CurveRecord, TrainingCurve, CURVE_HEADER};
pub use fit::{fit, fit_with, sequential_batches, FitOutcome};
pub use loss::{batch_gradients, batch_loss, batch_nll, corpus_loss, example_nll};
pub use optim::{clip_grad_norm, lr_schedule_step, nag_step, OptimizerState, ScheduleDecision};

pub(crate) use config::TRAIN_KEYS;

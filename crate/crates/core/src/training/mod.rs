//! Losses, penalties, optimizer, learning-rate schedule and the two-stage
//! adversarial loop.

pub mod loss;
pub mod model;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use loss::{discriminator_loss, generator_loss, gradient_penalty, recon_rmse, stack_scores, LossWeights};
pub use model::Ragan;
pub use optim::AdamW;
pub use schedule::{lr_schedule, LrSchedule};
pub use trainer::{
    evaluate_rmse, metrics_csv, prepare, train, EpochMetrics, Prepared, StepInfo, StepKind, TrainConfig, TrainOutcome,
    TrainRun, METRICS_HEADER,
};

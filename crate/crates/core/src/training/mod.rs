//! Losses, optimizers, the learning-rate / early-stopping schedule, the
//! generic mini-batch training loop and the experiment runner behind the
//! CLI.

mod experiment;
mod losses;
mod optimizer;
mod run;
mod schedule;

pub use experiment::{
    exit_code, run_experiment, train_stress_pipeline, DataConfig, ExperimentConfig,
    FusionStageConfig, ModelConfig, RunArtifacts, SplitConfig, StressOutcome, Task,
    TrainingConfig, WindowingConfig,
};
pub use losses::{bce_loss, ccc_loss, mse_loss};
pub use optimizer::{Optimizer, OptimizerKind};
pub use run::{
    train, EpochRecord, FusionTask, SaGruTask, TaskLoss, TemmaTask, TrainConfig, TrainOutcome,
    Trainable,
};
pub use schedule::{ScheduleWatch, SchedulePolicy, TrainState};

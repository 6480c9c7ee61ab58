//! Optimisation, training and evaluation loops, ablation grids and the
//! gradient check.

pub mod ablate;
mod adam;
mod config;
pub mod gradcheck;
pub mod run;
mod trainer;

pub use adam::Adam;
pub use config::{parse_precision, precision_name, AdamConfig, ExperimentConfig, SplitKind};
pub use trainer::{
    batch_objective, epoch_order, evaluate, mean_loss, train, train_from, EpochRecord, Evaluation, Objective,
    TrainOutcome,
};

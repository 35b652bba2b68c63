//! Training loop: Adam with cosine-restart learning rates, the annealed
//! EBOPs penalty, and a Pareto front over (validation metric, EBOPs).

mod adam;
mod dataset;
mod pareto;
mod schedule;
mod train;

pub use adam::{Adam, AdamConfig};
pub use dataset::{Dataset, Targets};
pub use pareto::{Checkpoint, ParetoPoint, ParetoSet};
pub use schedule::CosineRestarts;
pub use train::{
    evaluate, evaluate_deployed, finalize, train, EpochMetrics, TrainConfig, TrainOutcome,
};

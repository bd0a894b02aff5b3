//! Optimization: loss, SGD, schedules, data sources and the training loop.

pub mod ablation;
pub mod augment;
pub mod cifar;
pub mod data;
pub mod loss;
pub mod sgd;
pub mod synthetic;
pub mod trainer;

pub use cifar::load_cifar10;
pub use data::{Dataset, Normalization};
pub use loss::{label_smoothing_loss, LossOutput};
pub use sgd::{sgd_step, Sgd, StepSchedule};
pub use synthetic::{make_synthetic, SyntheticConfig};
pub use trainer::{evaluate, fit, train, DataSource, EpochRow, TrainConfig, TrainOptions, TrainReport};

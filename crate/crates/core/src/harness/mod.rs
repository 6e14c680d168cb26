//! Desk-scale SGD-with-momentum trainer: synthetic data, a small MLP with
//! exact backprop, and a per-batch schedule-driven training loop.

pub mod dataset;
pub mod model;
pub mod optim;
pub mod train;

pub use dataset::{load_csv_dataset, make_synthetic_dataset, Dataset, Split, SyntheticKind};
pub use model::{
    forward_backward, Activation, Gradients, LayerParams, MlpModel, ParamBuffers, ParamIndex,
    Velocity,
};
pub use optim::sgd_momentum_step;
pub use train::{
    batches_per_epoch, evaluate_error, train, EpochRecord, Loss, RunRecord, StepRecord, TrainConfig,
};

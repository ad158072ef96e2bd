//! Training jobs: loss selection, optimisation, early stopping, prediction.

mod adam;
mod cache;
mod loss;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use cache::FeatureCache;
pub use loss::{loss_for_arity, select_loss, LossKind, PROB_EPSILON};
pub use trainer::{
    argmax, evaluate, predict, tensor_values, train, BatchSizes, EpochRecord, Evaluation, Optimizer, Predictions,
    StopReason, TrainConfig, TrainOptions, TrainRunRecord, HISTORY_FILE_NAME, RUN_FILE_NAME,
};

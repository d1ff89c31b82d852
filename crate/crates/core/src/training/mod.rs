//! Parameters, exact gradients through the whole pipeline (routing
//! iterations unrolled), finite-difference validation, RAdam, checkpoints
//! and the train/evaluate loops.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod radam;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, OptimizerKind, Task};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{batch_loss_and_grad, forward, loss_and_grad, predict, Model, PreparedTree, Target};
pub use params::{ParameterStore, StoreShape, EMBEDDING_INIT};
pub use radam::Optimizer;
pub use trainer::{evaluate, join_subwords, output_names, split_records, train, EpochLog, EvalMetrics, TrainReport};

//! Loss, metrics, optimizer, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod gradcheck;
mod metrics;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint,
    CheckpointEntry, CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, grad_check_csv, tiny_config, GradCheckSettings, ParamCheck, GRAD_CHECK_HEADER};
pub use metrics::{evaluate, evaluate_ha, l1_loss, metrics, MetricSums, Metrics, MAPE_MASK};
pub use trainer::{
    history_csv, train, EarlyStopping, EpochRecord, StopDecision, TrainConfig, TrainOutcome, HISTORY_HEADER,
};

//! Losses, optimizer and the training loop.

pub mod adam;
pub mod loss;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{det_loss, flow_loss, focal_loss, heatmap_target, DetLoss};
pub use trainer::{
    assemble_tuple, boxes_to_cells, enumerate_tuples, train_loop, LossRecord, TrainConfig,
    TrainRun, TupleData, TupleRef,
};

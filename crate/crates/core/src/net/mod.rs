//! Network: backbone/neck, feature enhancement, flow branch, flow-guided
//! propagation, detection heads and the multi-frame cascade.

pub mod backbone;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod model;

pub use backbone::backbone_neck;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{NetConfig, STRIDE};
pub use forward::Forward;
pub use model::{
    cost_volume, flow_from_cost, flow_guided_propagation, flow_guided_refs, topk_queries,
    vanilla_propagation, wrap_half_pi, Detection, NetOutput, Query, RafdNet,
};

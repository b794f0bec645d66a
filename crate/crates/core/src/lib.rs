//! Radar BEV flow-guided detection at desk scale.
//!
//! The crate is organized as a pipeline:
//!
//! ```text
//! sim ──► dataset on disk ──► train ──► checkpoint ──► eval
//!              │                │                        │
//!              └── flowgt ──────┴── net (tensor engine) ─┘
//! ```
//!
//! * [`tensor`] — minimal deterministic reverse-mode tensor engine with a
//!   finite-difference gradient checker.
//! * [`geometry`] — grid conventions, SE(2) ego poses, feature alignment.
//! * [`sim`] — seeded synthetic BEV radar sequence generator + on-disk layout.
//! * [`flowgt`] — pseudo ground-truth flow from box annotations.
//! * [`net`] — backbone, feature enhancement, flow estimation, flow-guided
//!   propagation and detection heads.
//! * [`train`] — losses, AdamW and the training loop.
//! * [`eval`] — rotated-box mAP and flow end-point error.

pub mod error;
pub mod eval;
pub mod flowgt;
pub mod geometry;
pub mod net;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! Minimal deterministic differentiable tensor engine.
//!
//! Exactly the op set the detection pipeline needs, with reverse-mode
//! gradients and a finite-difference gradient checker. Forward execution is
//! eager, single-threaded and bitwise deterministic.

pub mod array;
pub mod gradcheck;
mod graph;
mod ops_nn;
pub mod params;
pub mod snapshot;

pub use array::Array;
pub use gradcheck::{assert_grad_check, grad_check, GradCheck, FD_STEP};
pub use graph::{permute_map, transpose_map, Graph, Var};
pub use ops_nn::{BnMode, BnResult};
pub use params::{Init, Param, ParameterStore};

//! Minimal reverse-mode autodiff over dense f64 tensors, plus Adam.
//!
//! All math in the crate is f64; checkpoints quantize to f32 on disk only.

pub mod adam;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

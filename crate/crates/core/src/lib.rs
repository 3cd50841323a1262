//! Streaming 3D hand-gesture recognition engine.
//!
//! Pipeline: per-frame spatial graph convolution over the hand skeleton,
//! a per-joint temporal transformer encoder for window classification, and a
//! continual (KV-cached) single-output attention variant that processes one
//! frame per step at constant cost. On top sit the online sliding-window
//! recognition protocol with per-class probability thresholds and the
//! event-level evaluation metrics.

pub mod continual;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gcn;
pub mod metrics;
pub mod model;
pub mod online;
pub mod pipeline;
pub mod seeds;
pub mod skel;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::Tensor;

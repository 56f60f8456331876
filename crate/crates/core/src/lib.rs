//! Sequence-to-sequence single-object tracking, desk scale.
//!
//! Bounding boxes are quantized into discrete tokens and generated
//! autoregressively by a causal decoder over joint template/search features,
//! with window-penalty decoding, likelihood-gated template update, and an
//! optional low-rank multi-modal fusion interface. Everything runs on a
//! small from-scratch f32 autodiff engine and trains on a procedural
//! multi-modal benchmark.

pub mod codec;
pub mod decoder;
pub mod encoder;
pub mod fusion;
pub mod image;
pub mod metrics;
pub mod model;
pub mod runtime;
pub mod synth;
pub mod trainer;
pub mod tensor;

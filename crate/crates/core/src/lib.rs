//! Second-to-second co-attention transformer for audio-visual affect
//! prediction.
//!
//! Each video is cut into one-second segments. Every segment is encoded into
//! visual and audio token sequences, fused by symmetric self- and
//! cross-attention sub-blocks, and the per-second joint representations are
//! aggregated by an LSTM whose last state (or an attention-pooled context)
//! drives a sigmoid predictor.

pub mod error;
pub mod audio;
pub mod encoders;
pub mod layers;
pub mod coattention;
pub mod data;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! Joint intent classification and slot filling over a from-scratch
//! bidirectional Transformer encoder.
//!
//! The crate covers the whole pipeline: WordPiece tokenization with
//! first-sub-token slot alignment, a reverse-mode autodiff tape, the encoder,
//! intent and slot heads trained under a joint objective (optionally with a
//! linear-chain CRF over slot tags), Adam training with dev-set model
//! selection, and chunk-level evaluation.

pub mod baseline;
pub mod checkpoint;
pub mod crf;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

//! Hybrid CTC-attention speech recognition with byte-pair-encoded subword
//! units, written from scratch on a small reverse-mode tensor engine.
//!
//! The pipeline: [`features`] turns audio into normalized log-mel frames,
//! [`tokenizer`] learns subword units and segments transcripts, the shared
//! [`encoder`] feeds both the [`ctc`] loss and the location-aware
//! [`attention`] decoder, [`hybrid`] trains on their weighted sum,
//! [`decode`] runs beam search, and [`eval`] scores word error rates.

pub mod attention;
pub mod cli;
pub mod config;
pub mod ctc;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod hybrid;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod toy;

pub use error::{Error, Result};
pub use numerics::Tensor;

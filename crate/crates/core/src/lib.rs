//! Positional-bias and context-importance audits for dual-encoder
//! (CLIP-style) embedding models.
//!
//! The crate builds masked and shifted variants of captions and images,
//! embeds them through an [`backend::EmbeddingProvider`], scores retrieval
//! or zero-shot classification per (segment, position) cell and writes the
//! resulting curves as CSV, JSON and SVG.

pub mod backend;
pub mod error;
pub mod hash;
pub mod imageprobe;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod textprobe;
pub mod types;
pub mod vector;

pub use error::{Error, Result};

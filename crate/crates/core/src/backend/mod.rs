//! Embedding providers and the cache-fronted client the orchestrator uses.

mod cache;
pub mod conformance;
mod embedder;
mod http;
mod mock;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::ModelProfile;

pub use cache::EmbeddingCache;
pub use embedder::{EmbedStats, Embedder, EmbedderOptions};
pub use http::{HttpProvider, RetryPolicy};
pub use mock::{mock_embedding, mock_profile, MockProvider, MockStats, MOCK_VOCAB_SIZE};

/// The model contract a provider reports about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderInfo {
    #[serde(flatten)]
    pub profile: ModelProfile,
    pub tokenizer_id: String,
    pub vocab_size: u32,
}

impl ProviderInfo {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate(Some(self.vocab_size))
    }
}

/// Raw tokenizer output for one text: `[bos, .., eos]`, possibly padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    pub truncated: bool,
}

/// Anything that can tokenize and embed on behalf of a model. Vectors come
/// back in request order; they need not be normalized.
pub trait EmbeddingProvider: Send + Sync {
    fn info(&self) -> Result<ProviderInfo>;
    fn tokenize(&self, texts: &[String]) -> Result<Vec<Tokenized>>;
    fn embed_tokens(&self, token_ids: &[Vec<u32>]) -> Result<Vec<Vec<f32>>>;
    fn embed_images(&self, pngs: &[Vec<u8>]) -> Result<Vec<Vec<f32>>>;
}

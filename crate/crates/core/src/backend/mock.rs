//! Deterministic in-process provider for hermetic tests and dry runs.
//!
//! Embeddings are a pure function of the content key: component `i` is
//! `u / 2^63 - 1` where `u` is the first 8 bytes (little-endian) of
//! `SHA-256(key_ascii || (i as u64 LE))`, and the vector is then L2
//! normalized. `key_ascii` is the 64-character lowercase hex key itself.
//!
//! Tokenization lowercases the text, splits it into alphanumeric runs and
//! single punctuation characters, and maps each piece to
//! `1 + (first 8 bytes of SHA-256(piece), LE) mod (vocab - 3)`.

use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, ProviderInfo, Tokenized};
use crate::error::{Error, Result};
use crate::hash::{content_key, token_payload};
use crate::types::{EmbeddingRecord, ModelProfile, CLIP_RGB_MEAN, CLIP_RGB_STD};

pub const MOCK_VOCAB_SIZE: u32 = 49_408;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Window 77, resolution 224, patch 16, 64-dim output, CLIP statistics.
pub fn mock_profile() -> ModelProfile {
    ModelProfile {
        model_id: "mock-clip-b16".into(),
        text_window: 77,
        bos_token_id: 49_406,
        eos_token_id: 49_407,
        pad_token_id: 0,
        image_resolution: 224,
        patch_size: Some(16),
        rgb_mean: CLIP_RGB_MEAN,
        rgb_std: CLIP_RGB_STD,
        embed_dim: 64,
        normalizes_embeddings: true,
    }
}

fn le_u64(digest: &[u8]) -> u64 {
    u64::from_le_bytes(digest[..8].try_into().expect("sha-256 digest has 32 bytes"))
}

pub fn mock_embedding(key: &str, dim: usize) -> EmbeddingRecord {
    let raw: Vec<f64> = (0..dim as u64)
        .map(|i| {
            let mut h = Sha256::new();
            h.update(key.as_bytes());
            h.update(i.to_le_bytes());
            le_u64(&h.finalize()) as f64 / 9_223_372_036_854_775_808.0 - 1.0
        })
        .collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    EmbeddingRecord {
        vector: raw.iter().map(|x| (x / norm) as f32).collect(),
        key: key.to_owned(),
        normalized: true,
    }
}

/// Snapshot of how often each endpoint was hit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockStats {
    pub info_calls: u64,
    pub tokenize_calls: u64,
    pub embed_token_calls: u64,
    pub embed_image_calls: u64,
    pub token_sequences_encoded: u64,
    pub images_encoded: u64,
}

impl MockStats {
    pub fn embed_calls(&self) -> u64 {
        self.embed_token_calls + self.embed_image_calls
    }
}

#[derive(Default)]
struct Counters {
    info: AtomicU64,
    tokenize: AtomicU64,
    embed_tokens: AtomicU64,
    embed_images: AtomicU64,
    sequences: AtomicU64,
    images: AtomicU64,
}

pub struct MockProvider {
    info: ProviderInfo,
    counters: Counters,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::with_profile(mock_profile())
    }
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// A mock with a different geometry, e.g. a 248-token window.
    pub fn with_profile(profile: ModelProfile) -> Self {
        Self {
            info: ProviderInfo {
                profile,
                tokenizer_id: "mock-wordhash".into(),
                vocab_size: MOCK_VOCAB_SIZE,
            },
            counters: Counters::default(),
        }
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.info.profile
    }

    pub fn stats(&self) -> MockStats {
        let c = &self.counters;
        MockStats {
            info_calls: c.info.load(Ordering::Relaxed),
            tokenize_calls: c.tokenize.load(Ordering::Relaxed),
            embed_token_calls: c.embed_tokens.load(Ordering::Relaxed),
            embed_image_calls: c.embed_images.load(Ordering::Relaxed),
            token_sequences_encoded: c.sequences.load(Ordering::Relaxed),
            images_encoded: c.images.load(Ordering::Relaxed),
        }
    }

    fn token_id(&self, piece: &str) -> u32 {
        let span = u64::from(self.info.vocab_size - 3);
        1 + (le_u64(&Sha256::digest(piece.as_bytes())) % span) as u32
    }

    fn tokenize_one(&self, text: &str) -> Tokenized {
        let p = &self.info.profile;
        let lower = text.to_lowercase();
        let mut ids = vec![p.bos_token_id];
        let mut word = String::new();
        for c in lower.chars() {
            if c.is_alphanumeric() {
                word.push(c);
                continue;
            }
            if !word.is_empty() {
                ids.push(self.token_id(&word));
                word.clear();
            }
            if !c.is_whitespace() {
                ids.push(self.token_id(c.encode_utf8(&mut [0; 4])));
            }
        }
        if !word.is_empty() {
            ids.push(self.token_id(&word));
        }
        let truncated = ids.len() + 1 > p.text_window;
        ids.truncate(p.text_window - 1);
        ids.push(p.eos_token_id);
        Tokenized { ids, truncated }
    }
}

impl EmbeddingProvider for MockProvider {
    fn info(&self) -> Result<ProviderInfo> {
        self.counters.info.fetch_add(1, Ordering::Relaxed);
        Ok(self.info.clone())
    }

    fn tokenize(&self, texts: &[String]) -> Result<Vec<Tokenized>> {
        self.counters.tokenize.fetch_add(1, Ordering::Relaxed);
        Ok(texts.iter().map(|t| self.tokenize_one(t)).collect())
    }

    fn embed_tokens(&self, token_ids: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        let p = &self.info.profile;
        if let Some(bad) = token_ids.iter().find(|ids| ids.len() != p.text_window) {
            return Err(Error::Provider {
                message: format!("sequence length {} != text window {}", bad.len(), p.text_window),
                attempts: 1,
                retryable: false,
            });
        }
        self.counters.embed_tokens.fetch_add(1, Ordering::Relaxed);
        self.counters
            .sequences
            .fetch_add(token_ids.len() as u64, Ordering::Relaxed);
        Ok(token_ids
            .iter()
            .map(|ids| mock_embedding(&content_key(&p.model_id, &token_payload(ids)), p.embed_dim).vector)
            .collect())
    }

    fn embed_images(&self, pngs: &[Vec<u8>]) -> Result<Vec<Vec<f32>>> {
        let p = &self.info.profile;
        if pngs.iter().any(|b| !b.starts_with(&PNG_SIGNATURE)) {
            return Err(Error::Provider {
                message: "image payload is not a PNG stream".into(),
                attempts: 1,
                retryable: false,
            });
        }
        self.counters.embed_images.fetch_add(1, Ordering::Relaxed);
        self.counters.images.fetch_add(pngs.len() as u64, Ordering::Relaxed);
        Ok(pngs
            .iter()
            .map(|png| mock_embedding(&content_key(&p.model_id, png), p.embed_dim).vector)
            .collect())
    }
}

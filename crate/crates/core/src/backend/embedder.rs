use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use serde::Serialize;

use super::{EmbeddingCache, EmbeddingProvider, ProviderInfo};
use crate::error::{Error, Result};
use crate::hash::{content_key, token_payload};
use crate::textprobe::TokenSequence;
use crate::types::{EmbeddingRecord, ModelProfile};
use crate::vector::{l2_norm, l2_normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedderOptions {
    pub batch_size: usize,
    /// Batches in flight at once.
    pub concurrency: usize,
}

impl Default for EmbedderOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EmbedStats {
    /// Embed requests (batches) sent to the provider.
    pub embed_requests: u64,
    /// Inputs the provider actually encoded.
    pub items_encoded: u64,
    /// Distinct inputs served from the cache.
    pub cache_hits: u64,
    pub tokenize_requests: u64,
}

#[derive(Default)]
struct Counters {
    embed_requests: AtomicU64,
    items_encoded: AtomicU64,
    cache_hits: AtomicU64,
    tokenize_requests: AtomicU64,
}

/// Cache-fronted, batching client over an [`EmbeddingProvider`].
///
/// Inputs are keyed by [`content_key`] of their canonical payload. Cached
/// keys never reach the provider, duplicate inputs within one call are sent
/// once, and results come back in input order.
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    info: ProviderInfo,
    cache: Option<EmbeddingCache>,
    options: EmbedderOptions,
    counters: Counters,
}

impl Embedder {
    /// Fetches and validates the provider's model contract.
    pub fn connect(
        provider: Arc<dyn EmbeddingProvider>,
        cache: Option<EmbeddingCache>,
        options: EmbedderOptions,
    ) -> Result<Self> {
        if options.batch_size == 0 || options.concurrency == 0 {
            return Err(Error::invalid("batch size and concurrency must be positive"));
        }
        let info = provider.info()?;
        info.validate()?;
        Ok(Self {
            provider,
            info,
            cache,
            options,
            counters: Counters::default(),
        })
    }

    pub fn info(&self) -> &ProviderInfo {
        &self.info
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.info.profile
    }

    pub fn stats(&self) -> EmbedStats {
        let c = &self.counters;
        EmbedStats {
            embed_requests: c.embed_requests.load(Ordering::Relaxed),
            items_encoded: c.items_encoded.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            tokenize_requests: c.tokenize_requests.load(Ordering::Relaxed),
        }
    }

    /// Tokenizes `(item_id, text)` pairs into window-length sequences.
    pub fn tokenize(&self, texts: &[(&str, &str)]) -> Result<Vec<TokenSequence>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.options.batch_size) {
            let batch: Vec<String> = chunk.iter().map(|(_, t)| (*t).to_owned()).collect();
            self.counters.tokenize_requests.fetch_add(1, Ordering::Relaxed);
            let raw = self.provider.tokenize(&batch)?;
            if raw.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "tokenize: sent {} texts, got {} results",
                    chunk.len(),
                    raw.len()
                )));
            }
            for ((item, _), tok) in chunk.iter().zip(raw) {
                out.push(TokenSequence::from_provider_ids(&tok.ids, self.profile(), *item, tok.truncated)?);
            }
        }
        Ok(out)
    }

    /// Embeds full-window token arrays.
    pub fn embed_tokens<T: AsRef<[u32]> + Sync>(&self, seqs: &[T]) -> Result<Vec<EmbeddingRecord>> {
        let window = self.profile().text_window;
        if let Some(bad) = seqs.iter().find(|s| s.as_ref().len() != window) {
            return Err(Error::invalid(format!(
                "token sequence of length {} sent to a {window}-token model; pad first",
                bad.as_ref().len()
            )));
        }
        let model = &self.profile().model_id;
        let keys = seqs
            .iter()
            .map(|s| content_key(model, &token_payload(s.as_ref())))
            .collect();
        self.embed_keyed(keys, |idx| {
            let batch: Vec<Vec<u32>> = idx.iter().map(|&i| seqs[i].as_ref().to_vec()).collect();
            self.provider.embed_tokens(&batch)
        })
    }

    /// Embeds PNG streams.
    pub fn embed_images<T: AsRef<[u8]> + Sync>(&self, pngs: &[T]) -> Result<Vec<EmbeddingRecord>> {
        let model = &self.profile().model_id;
        let keys = pngs.iter().map(|p| content_key(model, p.as_ref())).collect();
        self.embed_keyed(keys, |idx| {
            let batch: Vec<Vec<u8>> = idx.iter().map(|&i| pngs[i].as_ref().to_vec()).collect();
            self.provider.embed_images(&batch)
        })
    }

    fn embed_keyed<F>(&self, keys: Vec<String>, send: F) -> Result<Vec<EmbeddingRecord>>
    where
        F: Fn(&[usize]) -> Result<Vec<Vec<f32>>> + Sync,
    {
        let mut vectors: HashMap<&str, Vec<f32>> = HashMap::new();
        // first input index for each key that has to go to the provider
        let mut misses: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if vectors.contains_key(key.as_str()) || misses.iter().any(|&m| keys[m] == *key) {
                continue;
            }
            match self.cache_get(key)? {
                Some(v) => {
                    self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                    vectors.insert(key, v);
                }
                None => misses.push(i),
            }
        }

        let batches: Vec<&[usize]> = misses.chunks(self.options.batch_size).collect();
        for wave in batches.chunks(self.options.concurrency) {
            let results: Vec<Result<Vec<Vec<f32>>>> = thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| scope.spawn(|| self.dispatch(batch, &send)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for (batch, result) in wave.iter().zip(results) {
                for (&i, vector) in batch.iter().zip(result?) {
                    if let Some(cache) = &self.cache {
                        cache.put(&keys[i], &vector)?;
                    }
                    vectors.insert(&keys[i], vector);
                }
            }
        }

        Ok(keys
            .iter()
            .map(|key| EmbeddingRecord {
                vector: vectors[key.as_str()].clone(),
                key: key.clone(),
                normalized: true,
            })
            .collect())
    }

    fn dispatch<F>(&self, batch: &[usize], send: &F) -> Result<Vec<Vec<f32>>>
    where
        F: Fn(&[usize]) -> Result<Vec<Vec<f32>>>,
    {
        self.counters.embed_requests.fetch_add(1, Ordering::Relaxed);
        let raw = send(batch)?;
        if raw.len() != batch.len() {
            return Err(Error::Protocol(format!(
                "sent {} inputs, got {} embeddings",
                batch.len(),
                raw.len()
            )));
        }
        self.counters
            .items_encoded
            .fetch_add(batch.len() as u64, Ordering::Relaxed);
        raw.into_iter().map(|v| self.finalize(v)).collect()
    }

    /// Checks shape and finiteness, then normalizes unless the provider
    /// already returned a unit vector and says so.
    fn finalize(&self, v: Vec<f32>) -> Result<Vec<f32>> {
        let dim = self.profile().embed_dim;
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Protocol("embedding contains non-finite values".into()));
        }
        if self.profile().normalizes_embeddings && (l2_norm(&v) - 1.0).abs() <= 1e-4 {
            return Ok(v);
        }
        l2_normalize(&v)
    }

    fn cache_get(&self, key: &str) -> Result<Option<Vec<f32>>> {
        let Some(cache) = &self.cache else {
            return Ok(None);
        };
        match cache.get(key)? {
            Some(v) if v.len() == self.profile().embed_dim => Ok(Some(v)),
            Some(v) => Err(Error::CorruptCache {
                key: key.to_owned(),
                message: format!("stored dim {} != model dim {}", v.len(), self.profile().embed_dim),
            }),
            None => Ok(None),
        }
    }
}

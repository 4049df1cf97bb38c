use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;

use super::wire::{
    EmbedImagesRequest, EmbedTokensRequest, EmbeddingsResponse, ErrorResponse, TokenizeRequest,
    TokenizeResponse, EMBED_IMAGES_PATH, EMBED_TOKENS_PATH, INFO_PATH, TOKENIZE_PATH,
};
use super::{EmbeddingProvider, ProviderInfo, Tokenized};
use crate::error::{Error, Result};

/// Bounded retries with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, failed_attempts: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(failed_attempts.saturating_sub(1))
    }
}

/// Client for a provider speaking the JSON protocol in [`super::wire`].
pub struct HttpProvider {
    base: String,
    client: Client,
    retry: RetryPolicy,
}

impl HttpProvider {
    pub fn new(base_url: &str) -> Result<Self> {
        Self::with_retry(base_url, RetryPolicy::default())
    }

    pub fn with_retry(base_url: &str, retry: RetryPolicy) -> Result<Self> {
        if retry.attempts == 0 {
            return Err(Error::invalid("retry policy needs at least one attempt"));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::invalid(format!("cannot build http client: {e}")))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_owned(),
            client,
            retry,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn call<T: DeserializeOwned>(&self, path: &str, build: impl Fn(&Client, String) -> RequestBuilder) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let (message, retryable) = match build(&self.client, url.clone()).send() {
                Ok(resp) if resp.status() == StatusCode::OK => match resp.bytes() {
                    Ok(bytes) => {
                        return serde_json::from_slice(&bytes)
                            .map_err(|e| Error::Protocol(format!("{url}: malformed response: {e}")))
                    }
                    Err(e) => (format!("{url}: reading body: {e}"), true),
                },
                Ok(resp) => {
                    let status = resp.status();
                    let detail = resp
                        .json::<ErrorResponse>()
                        .map(|e| e.error)
                        .unwrap_or_else(|_| "no error body".into());
                    let retryable = status.is_server_error()
                        || status == StatusCode::TOO_MANY_REQUESTS
                        || status == StatusCode::REQUEST_TIMEOUT;
                    (format!("{url}: HTTP {}: {detail}", status.as_u16()), retryable)
                }
                Err(e) => (format!("{url}: {e}"), true),
            };
            if !retryable || attempt >= self.retry.attempts {
                return Err(Error::Provider {
                    message,
                    attempts: attempt,
                    retryable,
                });
            }
            let wait = self.retry.backoff(attempt);
            log::warn!("{message}; retrying in {wait:?} (attempt {attempt}/{})", self.retry.attempts);
            thread::sleep(wait);
        }
    }
}

fn expect_len<T>(what: &str, got: &[T], expected: usize) -> Result<()> {
    if got.len() != expected {
        return Err(Error::Protocol(format!(
            "{what}: sent {expected} inputs, got {} results",
            got.len()
        )));
    }
    Ok(())
}

impl EmbeddingProvider for HttpProvider {
    fn info(&self) -> Result<ProviderInfo> {
        self.call(INFO_PATH, |c, url| c.get(url))
    }

    fn tokenize(&self, texts: &[String]) -> Result<Vec<Tokenized>> {
        let body = TokenizeRequest { texts: texts.to_vec() };
        let resp: TokenizeResponse = self.call(TOKENIZE_PATH, |c, url| c.post(url).json(&body))?;
        expect_len("tokenize", &resp.token_ids, texts.len())?;
        expect_len("tokenize truncated flags", &resp.truncated, texts.len())?;
        Ok(resp
            .token_ids
            .into_iter()
            .zip(resp.truncated)
            .map(|(ids, truncated)| Tokenized { ids, truncated })
            .collect())
    }

    fn embed_tokens(&self, token_ids: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        let body = EmbedTokensRequest {
            token_ids: token_ids.to_vec(),
        };
        let resp: EmbeddingsResponse = self.call(EMBED_TOKENS_PATH, |c, url| c.post(url).json(&body))?;
        expect_len("embed_tokens", &resp.embeddings, token_ids.len())?;
        Ok(resp.embeddings)
    }

    fn embed_images(&self, pngs: &[Vec<u8>]) -> Result<Vec<Vec<f32>>> {
        let body = EmbedImagesRequest {
            images_png_b64: pngs.iter().map(|b| B64.encode(b)).collect(),
        };
        let resp: EmbeddingsResponse = self.call(EMBED_IMAGES_PATH, |c, url| c.post(url).json(&body))?;
        expect_len("embed_images", &resp.embeddings, pngs.len())?;
        Ok(resp.embeddings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_millis(1000));
        assert_eq!(p.backoff(3), Duration::from_millis(2000));
    }

    #[test]
    fn unreachable_provider_reports_attempts() {
        let provider = HttpProvider::with_retry(
            "http://127.0.0.1:9",
            RetryPolicy {
                attempts: 2,
                initial_backoff: Duration::from_millis(1),
            },
        )
        .unwrap();
        match provider.info() {
            Err(Error::Provider { attempts, retryable, .. }) => {
                assert_eq!(attempts, 2);
                assert!(retryable);
            }
            other => panic!("expected provider error, got {other:?}"),
        }
    }
}

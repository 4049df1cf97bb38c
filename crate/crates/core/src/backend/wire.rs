//! JSON bodies of the embedding-provider protocol.
//!
//! ```text
//! GET  /v1/info            -> ProviderInfo
//! POST /v1/tokenize        {"texts": [..]}            -> {"token_ids": [[..]], "truncated": [..]}
//! POST /v1/embed_tokens    {"token_ids": [[..]]}      -> {"embeddings": [[..]]}
//! POST /v1/embed_images    {"images_png_b64": [..]}   -> {"embeddings": [[..]]}
//! non-200                  {"error": ".."}
//! ```
//!
//! Every array is order-preserving.

use serde::{Deserialize, Serialize};

pub const INFO_PATH: &str = "/v1/info";
pub const TOKENIZE_PATH: &str = "/v1/tokenize";
pub const EMBED_TOKENS_PATH: &str = "/v1/embed_tokens";
pub const EMBED_IMAGES_PATH: &str = "/v1/embed_images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub token_ids: Vec<Vec<u32>>,
    pub truncated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTokensRequest {
    pub token_ids: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedImagesRequest {
    pub images_png_b64: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsResponse {
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

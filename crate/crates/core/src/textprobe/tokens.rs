use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ModelProfile;

/// A tokenized caption padded to the model's full text window.
///
/// Layout: `[bos, interior.., eos, pad..]` with `valid_len` interior tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub valid_len: usize,
    pub source_item: String,
    /// The tokenizer output did not fit the window and was cut.
    #[serde(default)]
    pub truncated: bool,
}

impl TokenSequence {
    /// Builds a window-length sequence from raw tokenizer output.
    ///
    /// `raw` must start with bos. Everything from the first eos on is
    /// discarded and re-padded with the profile's pad id, so providers that
    /// pad with eos and providers that do not pad at all both work. Input
    /// that does not fit is cut to the interior capacity and eos is forced
    /// into the final slot.
    pub fn from_provider_ids(
        raw: &[u32],
        profile: &ModelProfile,
        source_item: impl Into<String>,
        truncated: bool,
    ) -> Result<Self> {
        let source_item = source_item.into();
        match raw.first() {
            Some(&id) if id == profile.bos_token_id => {}
            _ => {
                return Err(Error::Protocol(format!(
                    "token ids for {source_item:?} do not start with bos {}",
                    profile.bos_token_id
                )))
            }
        }
        let body = &raw[1..];
        let (interior, saw_eos) = match body.iter().position(|&t| t == profile.eos_token_id) {
            Some(end) => (&body[..end], true),
            None => (body, false),
        };
        let capacity = profile.interior_capacity();
        let cut = interior.len() > capacity;
        let interior = &interior[..interior.len().min(capacity)];

        let mut ids = Vec::with_capacity(profile.text_window);
        ids.push(profile.bos_token_id);
        ids.extend_from_slice(interior);
        ids.push(profile.eos_token_id);
        ids.resize(profile.text_window, profile.pad_token_id);

        Ok(Self {
            valid_len: interior.len(),
            ids,
            source_item,
            truncated: truncated || cut || !saw_eos,
        })
    }

    /// The caption tokens between bos and eos.
    pub fn interior(&self) -> &[u32] {
        &self.ids[1..=self.valid_len]
    }

    pub fn validate(&self, profile: &ModelProfile) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("token sequence {:?}: {msg}", self.source_item)));
        if self.ids.len() > profile.text_window {
            return bad("longer than the text window");
        }
        if self.valid_len + 2 > self.ids.len() {
            return bad("valid_len does not fit");
        }
        if self.ids[0] != profile.bos_token_id {
            return bad("first token is not bos");
        }
        if self.ids[self.valid_len + 1] != profile.eos_token_id {
            return bad("eos is not at valid_len + 1");
        }
        if self.interior().contains(&profile.eos_token_id) {
            return bad("more than one eos");
        }
        if self.ids[self.valid_len + 2..].iter().any(|&t| t != profile.pad_token_id) {
            return bad("non-pad token after eos");
        }
        Ok(())
    }
}

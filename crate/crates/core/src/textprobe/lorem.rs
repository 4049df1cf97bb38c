use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{variant_id, VariantMode};

use super::{TextPayload, TextVariant};

const DEFAULT_BANK: &str = include_str!("../../assets/lorem.txt");

/// Filler words for the Lorem-Ipsum perturbation, drawn cyclically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoremBank {
    words: Vec<String>,
}

impl Default for LoremBank {
    fn default() -> Self {
        Self::from_text(DEFAULT_BANK).expect("bundled lorem bank is non-empty")
    }
}

impl LoremBank {
    /// Whitespace-separated words; one per line in the shipped file.
    pub fn from_text(text: &str) -> Result<Self> {
        let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            return Err(Error::invalid("lorem bank has no words"));
        }
        Ok(Self { words })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Cuts `words` into `n` contiguous groups whose sizes differ by at most one;
/// the first `len % n` groups get the extra word.
pub fn split_balanced<'a>(words: &[&'a str], n: usize) -> Vec<Vec<&'a str>> {
    let (base, extra) = (words.len() / n, words.len() % n);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        out.push(words[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Text-level bias variants. The caption is cut into `segments`
/// word-balanced sub-texts; variant `(k, j)` has `positions` slots, each as
/// wide (in words) as sub-text `k`. Slot `j` holds sub-text `k`, every other
/// slot holds filler. The filler cursor starts at the head of the bank for
/// every variant and runs on across slots.
pub fn make_text_lorem_variants(
    item_id: &str,
    caption: &str,
    segments: usize,
    positions: usize,
    bank: &LoremBank,
) -> Result<Vec<TextVariant>> {
    if segments < 2 || positions < 2 {
        return Err(Error::invalid("lorem variants need at least 2 segments and 2 positions"));
    }
    let words: Vec<&str> = caption.split_whitespace().collect();
    if words.len() < segments {
        return Err(Error::CaptionTooShort {
            item: item_id.to_owned(),
            segments,
        });
    }
    let groups = split_balanced(&words, segments);

    let mut out = Vec::with_capacity(segments * positions);
    for (k, group) in groups.iter().enumerate() {
        for j in 0..positions {
            let mut filler = bank.words.iter().cycle();
            let mut parts: Vec<&str> = Vec::with_capacity(group.len() * positions);
            for slot in 0..positions {
                if slot == j {
                    parts.extend(group.iter().copied());
                } else {
                    parts.extend(filler.by_ref().take(group.len()).map(String::as_str));
                }
            }
            out.push(TextVariant {
                variant_id: variant_id(item_id, VariantMode::BiasLorem, k, j),
                mode: VariantMode::BiasLorem,
                segment_index: k,
                position_index: j,
                payload: TextPayload::Text(parts.join(" ")),
            });
        }
    }
    Ok(out)
}

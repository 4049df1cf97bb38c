//! Sentence-order shuffling of captions.
//!
//! Captions are cut at `.`, `?` and `!` (a run of delimiters counts as one
//! boundary and stays attached to the sentence before it), the sentences
//! are permuted, and the result is joined with single spaces.
//!
//! The permutation is a Fisher-Yates shuffle driven by xoshiro256++ seeded
//! through `seed_from_u64` (SplitMix64 expansion of the seed). For
//! `i = n-1 ..= 1` the swap index is `(next_u64() * (i + 1)) >> 64`,
//! computed in 128 bits.

use std::io::{BufRead, Write};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DELIMITERS: [char; 3] = ['.', '?', '!'];

/// Splits a caption into trimmed, non-empty sentences.
pub fn split_sub_captions(caption: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = caption.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if DELIMITERS.contains(&c) {
            while let Some(&next) = chars.peek() {
                if !DELIMITERS.contains(&next) {
                    break;
                }
                current.push(next);
                chars.next();
            }
            push_trimmed(&mut out, &current);
            current.clear();
        }
    }
    push_trimmed(&mut out, &current);
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_owned());
    }
}

/// The index permutation used to reorder `n` sentences under `seed`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((u128::from(rng.next_u64()) * (i as u128 + 1)) >> 64) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Reorders the sentences of `caption`. A caption with a single sentence
/// comes back unchanged, byte for byte.
pub fn shuffle_caption(caption: &str, seed: u64) -> String {
    let parts = split_sub_captions(caption);
    if parts.len() <= 1 {
        return caption.to_owned();
    }
    permutation(parts.len(), seed)
        .into_iter()
        .map(|i| parts[i].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-item seed: the first 8 bytes (little-endian) of
/// `SHA-256(seed as u64 LE || item_id)`. Each caption's shuffle is then
/// independent of where it sits in the corpus.
pub fn item_seed(seed: u64, item_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(item_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Deserialize)]
struct CorpusRow {
    #[serde(alias = "id")]
    item_id: String,
    caption: String,
}

#[derive(Debug, Serialize)]
struct ShuffledRow<'a> {
    item_id: &'a str,
    caption: String,
}

/// Shuffles a JSONL corpus of `{"item_id"|"id", "caption"}` rows into
/// `{"item_id", "caption"}` rows, one per input row, in input order.
/// Returns the number of rows written.
pub fn shuffle_corpus(input: impl BufRead, mut output: impl Write, seed: u64) -> Result<usize> {
    let mut count = 0;
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CorpusRow = serde_json::from_str(&line).map_err(|e| Error::ManifestRow {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let out = ShuffledRow {
            item_id: &row.item_id,
            caption: shuffle_caption(&row.caption, item_seed(seed, &row.item_id)),
        };
        serde_json::to_writer(&mut output, &out)?;
        output
            .write_all(b"\n")
            .map_err(|e| Error::io("<corpus output>", e))?;
        count += 1;
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_delimiters() {
        assert_eq!(split_sub_captions("One. Two! Three?"), vec!["One.", "Two!", "Three?"]);
        assert_eq!(split_sub_captions("Wow!! Really... yes"), vec!["Wow!!", "Really...", "yes"]);
        assert_eq!(split_sub_captions("  "), Vec::<String>::new());
    }

    #[test]
    fn single_sentence_unchanged() {
        for seed in 0..20 {
            assert_eq!(shuffle_caption("Only sentence.", seed), "Only sentence.");
            assert_eq!(shuffle_caption("  no delimiter at all ", seed), "  no delimiter at all ");
        }
    }

    #[test]
    fn identity_permutation_reproduces_input() {
        let seed = (0..1000u64)
            .find(|&s| permutation(3, s) == vec![0, 1, 2])
            .expect("some seed yields the identity");
        assert_eq!(shuffle_caption("One. Two! Three?", seed), "One. Two! Three?");
    }

    #[test]
    fn permutation_is_a_bijection() {
        for seed in 0..50 {
            let mut p = permutation(7, seed);
            p.sort_unstable();
            assert_eq!(p, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn corpus_rows() {
        let input = b"{\"id\":\"a\",\"caption\":\"One. Two. Three.\"}\n\n{\"item_id\":\"b\",\"caption\":\"Solo\"}\n";
        let mut out = Vec::new();
        assert_eq!(shuffle_corpus(&input[..], &mut out, 7).unwrap(), 2);
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows[1]["caption"], "Solo");
        assert_eq!(rows[0]["item_id"], "a");

        let err = shuffle_corpus(&b"{\"id\":1}\n"[..], Vec::new(), 0).unwrap_err();
        assert!(matches!(err, Error::ManifestRow { line: 1, .. }));
    }
}

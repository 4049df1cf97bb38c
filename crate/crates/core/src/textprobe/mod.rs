//! Text-side perturbations: token masking for context importance, segment
//! shifting for positional bias, Lorem-Ipsum filler at the text level, and
//! sentence shuffling of caption corpora.

mod lorem;
mod plan;
mod shuffle;
mod tokens;
mod variants;

pub use lorem::{make_text_lorem_variants, split_balanced, LoremBank};
pub use plan::derive_text_plan;
pub use shuffle::{item_seed, permutation, shuffle_caption, shuffle_corpus, split_sub_captions};
pub use tokens::TokenSequence;
pub use variants::{make_text_bias_variants, make_text_importance_variants, TextPayload, TextVariant};


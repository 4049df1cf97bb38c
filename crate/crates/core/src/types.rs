//! Domain types shared by the probes, the backend and the orchestrator.
//!
//! Everything here is a plain value: constructed once, validated, then
//! passed around by reference or cloned. All types serialize to JSON.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CLIP's per-channel normalization statistics.
pub const CLIP_RGB_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_RGB_STD: [f32; 3] = [0.268_629_5, 0.261_302_6, 0.275_777_1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

/// How the positions of a [`SegmentationPlan`] are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Offsets `0, s, 2s, ..`: one slot per segment, step equal to the segment length.
    StepEqual,
    /// `P` offsets spread evenly over the whole capacity.
    EvenSpread,
    /// Offsets supplied by the caller.
    Explicit,
}

/// The position schedule requested for a plan, with whatever data the
/// schedule needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "schedule")]
pub enum PositionSpec {
    StepEqual,
    EvenSpread { positions: usize },
    Explicit { offsets: Vec<usize> },
}

impl PositionSpec {
    pub fn schedule(&self) -> Schedule {
        match self {
            PositionSpec::StepEqual => Schedule::StepEqual,
            PositionSpec::EvenSpread { .. } => Schedule::EvenSpread,
            PositionSpec::Explicit { .. } => Schedule::Explicit,
        }
    }
}

/// Which perturbation produced a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantMode {
    /// One segment kept at its own slot, everything else masked.
    Importance,
    /// One segment moved to another slot, everything else masked.
    BiasMask,
    /// One sub-text moved to another slot, everything else Lorem-Ipsum filler.
    BiasLorem,
}

impl VariantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantMode::Importance => "importance",
            VariantMode::BiasMask => "bias-mask",
            VariantMode::BiasLorem => "bias-lorem",
        }
    }
}

impl fmt::Display for VariantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `{item_id}:{mode}:{k}:{j}`
pub fn variant_id(item_id: &str, mode: VariantMode, segment: usize, position: usize) -> String {
    format!("{item_id}:{mode}:{segment}:{position}")
}

/// Everything the harness needs to know about the model under audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub text_window: usize,
    pub bos_token_id: u32,
    pub eos_token_id: u32,
    pub pad_token_id: u32,
    pub image_resolution: u32,
    #[serde(default)]
    pub patch_size: Option<u32>,
    pub rgb_mean: [f32; 3],
    pub rgb_std: [f32; 3],
    pub embed_dim: usize,
    pub normalizes_embeddings: bool,
}

impl ModelProfile {
    /// Checks the profile invariants. `vocab_size`, when known, bounds the
    /// special token ids.
    pub fn validate(&self, vocab_size: Option<u32>) -> Result<()> {
        if self.model_id.is_empty() {
            return Err(Error::invalid("model_id is empty"));
        }
        if self.text_window < 4 {
            return Err(Error::invalid(format!(
                "text_window {} leaves no room for two interior tokens",
                self.text_window
            )));
        }
        if self.image_resolution == 0 {
            return Err(Error::invalid("image_resolution must be positive"));
        }
        if self.patch_size == Some(0) {
            return Err(Error::invalid("patch_size must be positive when present"));
        }
        if self.embed_dim == 0 {
            return Err(Error::invalid("embed_dim must be at least 1"));
        }
        for c in 0..3 {
            let (m, s) = (self.rgb_mean[c], self.rgb_std[c]);
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::invalid(format!("rgb_mean[{c}] = {m} outside [0, 1]")));
            }
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::invalid(format!("rgb_std[{c}] = {s} outside (0, 1]")));
            }
        }
        if let Some(vocab) = vocab_size {
            for (name, id) in [
                ("bos", self.bos_token_id),
                ("eos", self.eos_token_id),
                ("pad", self.pad_token_id),
            ] {
                if id >= vocab {
                    return Err(Error::invalid(format!(
                        "{name}_token_id {id} not below vocabulary size {vocab}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Interior token capacity: the window minus the bos and eos slots.
    pub fn interior_capacity(&self) -> usize {
        self.text_window.saturating_sub(2)
    }

    /// The 8-bit fill color for masked pixels, `round(255 * mean)` per channel.
    pub fn mean_fill(&self) -> [u8; 3] {
        self.rgb_mean
            .map(|m| (255.0 * f64::from(m)).round().clamp(0.0, 255.0) as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairItem {
    pub item_id: String,
    pub image_path: PathBuf,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// An ordered list of image/caption pairs with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PairItem>", into = "Vec<PairItem>")]
pub struct PairDataset {
    items: Vec<PairItem>,
}

impl PairDataset {
    pub fn new(items: Vec<PairItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if !seen.insert(item.item_id.as_str()) {
                return Err(Error::invalid(format!("duplicate item id {:?}", item.item_id)));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[PairItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Retrieval audits need a caption on every item.
    pub fn require_captions(&self) -> Result<()> {
        match self.items.iter().find(|i| i.caption.trim().is_empty()) {
            Some(item) => Err(Error::invalid(format!("item {:?} has an empty caption", item.item_id))),
            None => Ok(()),
        }
    }

    /// Classification audits need a label on every item.
    pub fn require_labels(&self) -> Result<()> {
        match self.items.iter().find(|i| i.label.is_none()) {
            Some(item) => Err(Error::invalid(format!("item {:?} has no label", item.item_id))),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<PairItem>> for PairDataset {
    type Error = Error;

    fn try_from(items: Vec<PairItem>) -> Result<Self> {
        Self::new(items)
    }
}

impl From<PairDataset> for Vec<PairItem> {
    fn from(d: PairDataset) -> Self {
        d.items
    }
}

/// How one input is cut into `num_segments` equal segments and where a
/// segment may be placed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationPlan {
    pub modality: Modality,
    pub num_segments: usize,
    /// Tokens for text, pixel rows (or columns) for images.
    pub segment_length: usize,
    pub positions: Vec<usize>,
    /// Interior token capacity, or the image side length in pixels.
    pub capacity: usize,
    pub schedule: Schedule,
    /// Image plans only: the band size is a multiple of the patch size.
    #[serde(default)]
    pub patch_aligned: bool,
}

impl SegmentationPlan {
    pub fn num_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_segments < 2 {
            return Err(Error::invalid("a plan needs at least 2 segments"));
        }
        if self.segment_length == 0 {
            return Err(Error::invalid("segment length must be positive"));
        }
        if self.positions.len() < 2 {
            return Err(Error::invalid("a plan needs at least 2 positions"));
        }
        if self.num_segments * self.segment_length > self.capacity {
            return Err(Error::invalid(format!(
                "{} segments of length {} exceed capacity {}",
                self.num_segments, self.segment_length, self.capacity
            )));
        }
        let max_offset = self.capacity - self.segment_length;
        if let Some(&o) = self.positions.iter().find(|&&o| o > max_offset) {
            return Err(Error::invalid(format!(
                "offset {o} exceeds capacity - segment length = {max_offset}"
            )));
        }
        if self.positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("offsets must be strictly increasing"));
        }
        if self.schedule == Schedule::StepEqual {
            let expected: Vec<usize> = (0..self.num_segments).map(|i| i * self.segment_length).collect();
            if self.positions != expected {
                return Err(Error::invalid("step-equal plan must use offsets 0, s, .., (N-1)s"));
            }
        }
        Ok(())
    }
}

/// An embedding vector keyed by the content hash of its request payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub vector: Vec<f32>,
    pub key: String,
    pub normalized: bool,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Accuracy of one segment across every position it was moved to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCurve {
    pub segment_index: usize,
    pub accuracies: Vec<f64>,
    /// Coefficient of variation of `accuracies`; `None` when every accuracy is
    /// zero and the ratio is undefined.
    pub cv: Option<f64>,
    pub metric_id: String,
    /// Position 0 holds the maximum accuracy for this segment.
    pub beginning_biased: bool,
}

/// Accuracy per segment kept in place, plus the same values resampled onto a
/// common `[0, 1]` axis so plans with different segment counts line up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceCurve {
    pub per_segment: Vec<f64>,
    pub interpolated: Vec<f64>,
}

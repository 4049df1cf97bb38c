use crate::error::{Error, Result};
use crate::textprobe::TokenSequence;
use crate::types::{Modality, ModelProfile, PositionSpec, SegmentationPlan};

/// Splits the caption region of `seq` into `segments` equal token spans and
/// lays out the positions a span may be moved to.
///
/// The segmented region is `L = min(valid_len, capacity, region_tokens)`;
/// tokens past `segments * s` are dropped. `region_tokens` caps the region
/// for short-caption setups that only look at the first few tokens.
pub fn derive_text_plan(
    profile: &ModelProfile,
    seq: &TokenSequence,
    segments: usize,
    spec: &PositionSpec,
    region_tokens: Option<usize>,
) -> Result<SegmentationPlan> {
    if segments < 2 {
        return Err(Error::invalid("text plans need at least 2 segments"));
    }
    let capacity = profile.interior_capacity();
    if capacity < segments {
        return Err(Error::invalid(format!(
            "interior capacity {capacity} cannot hold {segments} segments"
        )));
    }
    let region = seq
        .valid_len
        .min(capacity)
        .min(region_tokens.unwrap_or(usize::MAX));
    let segment_length = region / segments;
    if segment_length == 0 {
        return Err(Error::CaptionTooShort {
            item: seq.source_item.clone(),
            segments,
        });
    }

    let positions = match spec {
        PositionSpec::StepEqual => (0..segments).map(|i| i * segment_length).collect(),
        PositionSpec::EvenSpread { positions } => even_spread(capacity, segment_length, *positions)?,
        PositionSpec::Explicit { offsets } => offsets.clone(),
    };

    let plan = SegmentationPlan {
        modality: Modality::Text,
        num_segments: segments,
        segment_length,
        positions,
        capacity,
        schedule: spec.schedule(),
        patch_aligned: false,
    };
    plan.validate()?;
    Ok(plan)
}

/// `round(i * (capacity - s) / (P - 1))` for `i in 0..P`, halves rounded up,
/// with duplicates removed.
fn even_spread(capacity: usize, segment_length: usize, count: usize) -> Result<Vec<usize>> {
    if count < 2 {
        return Err(Error::invalid("even-spread schedule needs at least 2 positions"));
    }
    let span = capacity - segment_length;
    let denom = count - 1;
    let mut out: Vec<usize> = (0..count)
        .map(|i| (2 * i * span + denom) / (2 * denom))
        .collect();
    out.dedup();
    Ok(out)
}

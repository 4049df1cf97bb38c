use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprobe::TokenSequence;
use crate::types::{variant_id, Modality, ModelProfile, SegmentationPlan, VariantMode};

/// What gets sent to the provider for a text variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextPayload {
    /// A full-window token array, ready to embed.
    Ids(Vec<u32>),
    /// Raw text, tokenized by the provider before embedding.
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextVariant {
    pub variant_id: String,
    pub mode: VariantMode,
    pub segment_index: usize,
    pub position_index: usize,
    #[serde(flatten)]
    pub payload: TextPayload,
}

impl TextVariant {
    pub fn ids(&self) -> Option<&[u32]> {
        match &self.payload {
            TextPayload::Ids(ids) => Some(ids),
            TextPayload::Text(_) => None,
        }
    }
}

fn check_plan(seq: &TokenSequence, plan: &SegmentationPlan, profile: &ModelProfile) -> Result<()> {
    if plan.modality != Modality::Text {
        return Err(Error::invalid("text variants need a text plan"));
    }
    plan.validate()?;
    if plan.num_segments * plan.segment_length > seq.valid_len {
        return Err(Error::invalid(format!(
            "plan covers {} tokens but {:?} has only {}",
            plan.num_segments * plan.segment_length,
            seq.source_item,
            seq.valid_len
        )));
    }
    if plan.capacity != profile.interior_capacity() {
        return Err(Error::invalid("plan capacity does not match the profile window"));
    }
    Ok(())
}

/// `[bos, pad * capacity, eos]`: every variant shares this geometry, eos
/// pinned to the last slot.
fn masked_frame(profile: &ModelProfile) -> Vec<u32> {
    let mut ids = vec![profile.pad_token_id; profile.text_window];
    ids[0] = profile.bos_token_id;
    ids[profile.text_window - 1] = profile.eos_token_id;
    ids
}

fn place(seq: &TokenSequence, plan: &SegmentationPlan, profile: &ModelProfile, segment: usize, offset: usize) -> Vec<u32> {
    let s = plan.segment_length;
    let mut ids = masked_frame(profile);
    let src = &seq.interior()[segment * s..(segment + 1) * s];
    ids[1 + offset..1 + offset + s].copy_from_slice(src);
    ids
}

/// One variant per segment: segment `k` stays at interior offset `k * s`,
/// every other interior slot is padding.
pub fn make_text_importance_variants(
    seq: &TokenSequence,
    plan: &SegmentationPlan,
    profile: &ModelProfile,
) -> Result<Vec<TextVariant>> {
    check_plan(seq, plan, profile)?;
    Ok((0..plan.num_segments)
        .map(|k| TextVariant {
            variant_id: variant_id(&seq.source_item, VariantMode::Importance, k, k),
            mode: VariantMode::Importance,
            segment_index: k,
            position_index: k,
            payload: TextPayload::Ids(place(seq, plan, profile, k, k * plan.segment_length)),
        })
        .collect())
}

/// `N * P` variants, segment-major: variant `(k, j)` puts segment `k` at
/// `plan.positions[j]` and pads the rest of the interior.
pub fn make_text_bias_variants(
    seq: &TokenSequence,
    plan: &SegmentationPlan,
    profile: &ModelProfile,
) -> Result<Vec<TextVariant>> {
    check_plan(seq, plan, profile)?;
    let mut out = Vec::with_capacity(plan.num_segments * plan.num_positions());
    for k in 0..plan.num_segments {
        for (j, &offset) in plan.positions.iter().enumerate() {
            out.push(TextVariant {
                variant_id: variant_id(&seq.source_item, VariantMode::BiasMask, k, j),
                mode: VariantMode::BiasMask,
                segment_index: k,
                position_index: j,
                payload: TextPayload::Ids(place(seq, plan, profile, k, offset)),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprobe::derive_text_plan;
    use crate::types::{PositionSpec, Schedule, CLIP_RGB_MEAN, CLIP_RGB_STD};

    const PAD: u32 = 0;
    const BOS: u32 = 900;
    const EOS: u32 = 901;

    fn profile(window: usize) -> ModelProfile {
        ModelProfile {
            model_id: "t".into(),
            text_window: window,
            bos_token_id: BOS,
            eos_token_id: EOS,
            pad_token_id: PAD,
            image_resolution: 224,
            patch_size: None,
            rgb_mean: CLIP_RGB_MEAN,
            rgb_std: CLIP_RGB_STD,
            embed_dim: 4,
            normalizes_embeddings: false,
        }
    }

    // a b c d -> 1 2 3 4
    fn abcd(p: &ModelProfile) -> TokenSequence {
        TokenSequence::from_provider_ids(&[BOS, 1, 2, 3, 4, EOS], p, "x", false).unwrap()
    }

    fn interior(p: &ModelProfile, v: &TextVariant) -> Vec<u32> {
        let ids = v.ids().unwrap();
        assert_eq!(ids[0], BOS);
        assert_eq!(ids[p.text_window - 1], EOS);
        ids[1..p.text_window - 1].to_vec()
    }

    #[test]
    fn importance_keeps_segment_in_place() {
        let p = profile(6);
        let seq = abcd(&p);
        let plan = derive_text_plan(&p, &seq, 2, &PositionSpec::StepEqual, None).unwrap();
        let v = make_text_importance_variants(&seq, &plan, &p).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(interior(&p, &v[0]), vec![1, 2, PAD, PAD]);
        assert_eq!(interior(&p, &v[1]), vec![PAD, PAD, 3, 4]);
        assert_eq!(v[1].variant_id, "x:importance:1:1");
    }

    #[test]
    fn bias_moves_segment() {
        let p = profile(6);
        let seq = abcd(&p);
        let plan = derive_text_plan(&p, &seq, 2, &PositionSpec::StepEqual, None).unwrap();
        assert_eq!(plan.positions, vec![0, 2]);
        let v = make_text_bias_variants(&seq, &plan, &p).unwrap();
        assert_eq!(v.len(), 4);
        // k-major order
        let order: Vec<_> = v.iter().map(|v| (v.segment_index, v.position_index)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(interior(&p, &v[2]), vec![3, 4, PAD, PAD]);
        assert_eq!(interior(&p, &v[1]), vec![PAD, PAD, 1, 2]);
        assert_eq!(v[1].variant_id, "x:bias-mask:0:1");
    }

    #[test]
    fn eos_is_pinned_even_for_short_captions() {
        let p = profile(10);
        let seq = abcd(&p);
        let plan = derive_text_plan(&p, &seq, 2, &PositionSpec::StepEqual, None).unwrap();
        let v = make_text_importance_variants(&seq, &plan, &p).unwrap();
        assert_eq!(v[0].ids().unwrap(), &[BOS, 1, 2, PAD, PAD, PAD, PAD, PAD, PAD, EOS]);
    }

    #[test]
    fn tail_tokens_are_masked() {
        let p = profile(9);
        let seq = TokenSequence::from_provider_ids(&[BOS, 1, 2, 3, 4, 5, EOS], &p, "x", false).unwrap();
        let plan = derive_text_plan(&p, &seq, 2, &PositionSpec::StepEqual, None).unwrap();
        let v = make_text_importance_variants(&seq, &plan, &p).unwrap();
        assert!(v.iter().all(|v| !v.ids().unwrap().contains(&5)));
    }

    #[test]
    fn thirty_six_variants_on_long_window() {
        let p = profile(248);
        let mut raw = vec![BOS];
        raw.extend(1..=120);
        raw.push(EOS);
        let seq = TokenSequence::from_provider_ids(&raw, &p, "u", false).unwrap();
        let plan = derive_text_plan(&p, &seq, 6, &PositionSpec::StepEqual, None).unwrap();
        assert_eq!(make_text_bias_variants(&seq, &plan, &p).unwrap().len(), 36);
    }

    #[test]
    fn rejects_image_plan() {
        let p = profile(6);
        let seq = abcd(&p);
        let mut plan = derive_text_plan(&p, &seq, 2, &PositionSpec::StepEqual, None).unwrap();
        plan.modality = Modality::Image;
        assert!(make_text_bias_variants(&seq, &plan, &p).is_err());
        plan.modality = Modality::Text;
        plan.schedule = Schedule::Explicit;
        plan.positions = vec![0, 1, 2];
        assert_eq!(make_text_bias_variants(&seq, &plan, &p).unwrap().len(), 6);
    }
}

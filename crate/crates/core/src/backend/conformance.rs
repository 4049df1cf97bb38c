//! Self-checks run against a live provider before an audit is trusted.

use serde::Serialize;

use super::{EmbeddingProvider, ProviderInfo};
use crate::error::Result;
use crate::imageprobe::ImageCanvas;
use crate::textprobe::TokenSequence;
use crate::vector::l2_normalize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl ConformanceCheck {
    fn from_result(name: &'static str, r: Result<String>) -> Self {
        match r {
            Ok(detail) => Self {
                name,
                passed: true,
                detail,
            },
            Err(e) => Self {
                name,
                passed: false,
                detail: e.to_string(),
            },
        }
    }
}

fn fail(msg: impl Into<String>) -> crate::error::Error {
    crate::error::Error::Protocol(msg.into())
}

fn unit(v: &[f32], dim: usize) -> Result<Vec<f32>> {
    if v.len() != dim {
        return Err(fail(format!("embedding has {} components, info says {dim}", v.len())));
    }
    l2_normalize(v)
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn minimal_sequence(info: &ProviderInfo) -> Vec<u32> {
    let p = &info.profile;
    let mut ids = vec![p.pad_token_id; p.text_window];
    ids[0] = p.bos_token_id;
    ids[1] = p.eos_token_id;
    ids
}

fn test_png(info: &ProviderInfo, shade: u8) -> Result<Vec<u8>> {
    let r = info.profile.image_resolution;
    ImageCanvas::filled(r, r, [shade, 255 - shade, shade / 2]).encode_png()
}

/// Runs every check; a failing check never aborts the others. Checks that
/// depend on `info` are reported as failed when `info` itself fails.
pub fn run_conformance(provider: &dyn EmbeddingProvider) -> Vec<ConformanceCheck> {
    let info = provider.info();
    let mut checks = vec![ConformanceCheck::from_result(
        "info",
        info.as_ref()
            .map_err(|e| fail(e.to_string()))
            .and_then(|i| {
                i.validate()?;
                Ok(format!(
                    "{} window={} resolution={} dim={}",
                    i.profile.model_id, i.profile.text_window, i.profile.image_resolution, i.profile.embed_dim
                ))
            }),
    )];
    let Ok(info) = info else {
        return checks;
    };
    let dim = info.profile.embed_dim;

    checks.push(ConformanceCheck::from_result("tokenize-empty", (|| {
        let out = provider.tokenize(&[String::new()])?;
        let [t] = out.as_slice() else {
            return Err(fail(format!("one text in, {} results out", out.len())));
        };
        let seq = TokenSequence::from_provider_ids(&t.ids, &info.profile, "", t.truncated)?;
        if seq.valid_len != 0 {
            return Err(fail(format!("empty text has {} interior tokens", seq.valid_len)));
        }
        Ok("[bos, eos]".into())
    })()));

    checks.push(ConformanceCheck::from_result("tokenize-deterministic", (|| {
        let texts = vec!["a dog on a red couch.".to_owned(), "two birds".to_owned()];
        let a = provider.tokenize(&texts)?;
        let b = provider.tokenize(&texts)?;
        if a.len() != texts.len() {
            return Err(fail(format!("{} texts in, {} results out", texts.len(), a.len())));
        }
        if a != b {
            return Err(fail("repeated tokenize calls disagree"));
        }
        Ok(format!("{} texts", texts.len()))
    })()));

    checks.push(ConformanceCheck::from_result("embed-tokens", (|| {
        let out = provider.embed_tokens(&[minimal_sequence(&info)])?;
        let [v] = out.as_slice() else {
            return Err(fail(format!("one sequence in, {} vectors out", out.len())));
        };
        unit(v, dim)?;
        Ok(format!("dim {dim}"))
    })()));

    checks.push(ConformanceCheck::from_result("embed-images", (|| {
        let out = provider.embed_images(&[test_png(&info, 40)?])?;
        let [v] = out.as_slice() else {
            return Err(fail(format!("one image in, {} vectors out", out.len())));
        };
        unit(v, dim)?;
        Ok(format!("dim {dim}"))
    })()));

    checks.push(ConformanceCheck::from_result("batch-order", (|| {
        let a = test_png(&info, 10)?;
        let b = test_png(&info, 200)?;
        let fwd = provider.embed_images(&[a.clone(), b.clone()])?;
        let rev = provider.embed_images(&[b, a])?;
        if fwd.len() != 2 || rev.len() != 2 {
            return Err(fail("two images in, wrong number of vectors out"));
        }
        let d0 = max_abs_diff(&unit(&fwd[0], dim)?, &unit(&rev[1], dim)?);
        let d1 = max_abs_diff(&unit(&fwd[1], dim)?, &unit(&rev[0], dim)?);
        let worst = d0.max(d1);
        if worst > 1e-5 {
            return Err(fail(format!("swapping batch order changed vectors by {worst:e}")));
        }
        Ok(format!("max deviation {worst:e}"))
    })()));

    checks
}

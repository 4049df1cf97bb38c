//! Retrieval and zero-shot scoring, bias statistics, importance resampling.
//!
//! Ranking ties always resolve toward the lower gallery (or class) index, so
//! results do not depend on platform float quirks or sort stability.

use std::collections::BTreeMap;
use std::thread;

use crate::error::{Error, Result};
use crate::types::{BiasCurve, EmbeddingRecord, ImportanceCurve};
use crate::vector::dot;

/// Cosine scores, queries by gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    scores: Vec<Vec<f64>>,
    query_ids: Vec<String>,
    gallery_ids: Vec<String>,
}

impl SimilarityMatrix {
    pub fn from_scores(scores: Vec<Vec<f64>>, query_ids: Vec<String>, gallery_ids: Vec<String>) -> Result<Self> {
        if scores.len() != query_ids.len() {
            return Err(Error::invalid(format!(
                "{} score rows for {} query ids",
                scores.len(),
                query_ids.len()
            )));
        }
        if let Some(row) = scores.iter().find(|r| r.len() != gallery_ids.len()) {
            return Err(Error::invalid(format!(
                "score row of length {} for {} gallery ids",
                row.len(),
                gallery_ids.len()
            )));
        }
        if scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::invalid("similarity scores must be finite"));
        }
        Ok(Self {
            scores,
            query_ids,
            gallery_ids,
        })
    }

    /// Replaces the default (content key) labels.
    pub fn with_ids(self, query_ids: Vec<String>, gallery_ids: Vec<String>) -> Result<Self> {
        Self::from_scores(self.scores, query_ids, gallery_ids)
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn gallery_ids(&self) -> &[String] {
        &self.gallery_ids
    }

    pub fn num_queries(&self) -> usize {
        self.scores.len()
    }

    pub fn num_gallery(&self) -> usize {
        self.gallery_ids.len()
    }

    /// Zero-based rank of gallery item `target` in query row `q`.
    pub fn rank_of(&self, q: usize, target: usize) -> usize {
        rank_in_row(&self.scores[q], target)
    }

    /// Index of the best gallery item for query `q`, lowest index on ties.
    pub fn argmax(&self, q: usize) -> Option<usize> {
        argmax_row(&self.scores[q])
    }
}

/// Zero-based rank of `row[target]`: items scoring strictly higher, plus
/// equal-scoring items at a lower index.
pub fn rank_in_row(row: &[f64], target: usize) -> usize {
    let t = row[target];
    row.iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// First index holding the row maximum.
pub fn argmax_row(row: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &s) in row.iter().enumerate() {
        if best.is_none_or(|b| s > row[b]) {
            best = Some(j);
        }
    }
    best
}

/// Dot products of already-normalized vectors, accumulated in `f64`. Rows
/// are labelled with each record's content key.
pub fn similarity_matrix(queries: &[EmbeddingRecord], gallery: &[EmbeddingRecord]) -> Result<SimilarityMatrix> {
    let dim = queries.first().or(gallery.first()).map_or(0, EmbeddingRecord::dim);
    if let Some(bad) = queries.iter().chain(gallery).find(|r| r.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    let row = |q: &EmbeddingRecord| -> Vec<f64> { gallery.iter().map(|g| dot(&q.vector, &g.vector)).collect() };

    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    let scores: Vec<Vec<f64>> = if queries.len() * gallery.len() < 1 << 16 || workers == 1 {
        queries.iter().map(row).collect()
    } else {
        let chunk = queries.len().div_ceil(workers);
        thread::scope(|s| {
            let handles: Vec<_> = queries
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(row).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("similarity worker panicked"))
                .collect()
        })
    };
    SimilarityMatrix::from_scores(
        scores,
        queries.iter().map(|r| r.key.clone()).collect(),
        gallery.iter().map(|r| r.key.clone()).collect(),
    )
}

fn check_truth(sim: &SimilarityMatrix, truth: &[usize]) -> Result<()> {
    if truth.len() != sim.num_queries() {
        return Err(Error::invalid(format!(
            "{} truth indices for {} queries",
            truth.len(),
            sim.num_queries()
        )));
    }
    if sim.num_queries() == 0 {
        return Err(Error::invalid("no queries to score"));
    }
    if let Some(&t) = truth.iter().find(|&&t| t >= sim.num_gallery()) {
        return Err(Error::invalid(format!(
            "truth index {t} out of range for a gallery of {}",
            sim.num_gallery()
        )));
    }
    Ok(())
}

/// Fraction of queries whose true gallery item ranks within the top `k`.
pub fn recall_at_k(sim: &SimilarityMatrix, truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("recall K must be at least 1"));
    }
    check_truth(sim, truth)?;
    let hits = truth
        .iter()
        .enumerate()
        .filter(|&(q, &t)| sim.rank_of(q, t) < k)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Top-1 accuracy of `sim` read as image-by-class logits.
pub fn top1_accuracy(sim: &SimilarityMatrix, truth: &[usize]) -> Result<f64> {
    if sim.num_gallery() == 0 {
        return Err(Error::invalid("zero-shot classification needs at least one class"));
    }
    check_truth(sim, truth)?;
    let correct = truth
        .iter()
        .enumerate()
        .filter(|&(q, &t)| sim.argmax(q) == Some(t))
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Zero-shot top-1: each image takes the class whose prompt embedding has
/// the highest cosine, lowest class index on ties.
pub fn top1_zero_shot(
    images: &[EmbeddingRecord],
    class_prompts: &[EmbeddingRecord],
    truth: &[usize],
) -> Result<f64> {
    if class_prompts.is_empty() {
        return Err(Error::invalid("zero-shot classification needs at least one class"));
    }
    top1_accuracy(&similarity_matrix(images, class_prompts)?, truth)
}

/// Population standard deviation over the mean.
///
/// The bias literature this tool follows reports the statistic without
/// pinning a formula; positions are the whole population of interest, so
/// the divisor is `n`, not `n - 1`.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::DegenerateAccuracy(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateAccuracy("non-finite value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(Error::DegenerateAccuracy(format!("mean {mean} is not positive")));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Resamples per-segment values onto `m` evenly spaced points of `[0, 1]`.
///
/// Segment `k` of `n` sits at `(k + 0.5) / n`; between anchors the curve is
/// linear and outside them it holds the nearest end value.
pub fn interpolate_to_scale(per_segment: &[f64], m: usize) -> Result<Vec<f64>> {
    if per_segment.is_empty() {
        return Err(Error::invalid("nothing to interpolate"));
    }
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 output points, got {m}")));
    }
    let n = per_segment.len();
    let nf = n as f64;
    Ok((0..m)
        .map(|i| {
            let x = i as f64 / (m - 1) as f64;
            // fractional anchor index
            let u = x * nf - 0.5;
            if u <= 0.0 {
                return per_segment[0];
            }
            if u >= (n - 1) as f64 {
                return per_segment[n - 1];
            }
            let k = u.floor() as usize;
            let t = u - k as f64;
            per_segment[k] + t * (per_segment[k + 1] - per_segment[k])
        })
        .collect())
}

pub fn importance_curve(per_segment: Vec<f64>, m: usize) -> Result<ImportanceCurve> {
    let interpolated = interpolate_to_scale(&per_segment, m)?;
    Ok(ImportanceCurve {
        per_segment,
        interpolated,
    })
}

/// Groups a `(segment, position) -> accuracy` table into one curve per
/// segment. Every cell of the `segments x positions` grid must be present.
pub fn assemble_bias_curves(
    segments: usize,
    positions: usize,
    cells: &BTreeMap<(usize, usize), f64>,
    metric_id: &str,
) -> Result<Vec<BiasCurve>> {
    let missing: Vec<(usize, usize)> = (0..segments)
        .flat_map(|k| (0..positions).map(move |j| (k, j)))
        .filter(|cell| !cells.contains_key(cell))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteRun { missing });
    }
    if let Some((&(k, j), &a)) = cells.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("accuracy {a} at ({k}, {j}) is outside [0, 1]")));
    }
    (0..segments)
        .map(|k| {
            let accuracies: Vec<f64> = (0..positions).map(|j| cells[&(k, j)]).collect();
            let cv = if accuracies.iter().all(|&a| a == 0.0) {
                None
            } else {
                Some(coefficient_of_variation(&accuracies)?)
            };
            let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(BiasCurve {
                segment_index: k,
                beginning_biased: accuracies.first() == Some(&max),
                accuracies,
                cv,
                metric_id: metric_id.to_owned(),
            })
        })
        .collect()
}

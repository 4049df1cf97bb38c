//! Small vector helpers. Storage is `f32`; accumulation is `f64`.

use crate::error::{Error, Result};

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

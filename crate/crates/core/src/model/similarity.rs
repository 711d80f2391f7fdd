//! Shifted cosine similarity, prototype transforms and k-filtering.

use super::ModelError;
use crate::matrix::{dot, norm, Matrix};

/// Norm floor used on the training/scoring path.
pub const NORM_EPS: f64 = 1e-12;

/// `1 + cos(x, y)`, in `[0, 2]`. Errors on zero-norm input.
pub fn shifted_cosine(x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(ModelError::ZeroNorm);
    }
    Ok((1.0 + dot(x, y) / (nx * ny)).clamp(0.0, 2.0))
}

/// A vector scaled by its floored norm. `unit` has length 1 unless the norm was floored.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub unit: Vec<f64>,
    pub norm: f64,
    pub floored: bool,
}

impl Normalized {
    pub fn new(x: &[f64]) -> Self {
        let n = norm(x);
        let floored = n < NORM_EPS;
        let norm = if floored { NORM_EPS } else { n };
        Normalized { unit: x.iter().map(|v| v / norm).collect(), norm, floored }
    }

    /// Accumulates `scale * d(unit . other_unit)/d(self)` into `out`, where
    /// `cos` is `unit . other_unit`.
    pub fn add_cos_grad(&self, other_unit: &[f64], cos: f64, scale: f64, out: &mut [f64]) {
        let s = scale / self.norm;
        if self.floored {
            for (o, b) in out.iter_mut().zip(other_unit) {
                *o += s * b;
            }
        } else {
            for ((o, b), a) in out.iter_mut().zip(other_unit).zip(&self.unit) {
                *o += s * (b - cos * a);
            }
        }
    }

    /// Pulls a gradient with respect to `unit` back to the raw vector.
    pub fn add_unit_grad(&self, g_unit: &[f64], out: &mut [f64]) {
        let proj = dot(g_unit, &self.unit);
        self.add_cos_grad(g_unit, proj, 1.0, out);
    }
}

/// Row-normalized copy of a matrix.
pub fn normalize_rows(m: &Matrix) -> Vec<Normalized> {
    m.iter_rows().map(Normalized::new).collect()
}

/// Shifted cosine with the norm floor, as used during training and scoring.
pub fn shifted_cosine_floored(x: &[f64], y: &[f64]) -> f64 {
    let (a, b) = (Normalized::new(x), Normalized::new(y));
    1.0 + dot(&a.unit, &b.unit)
}

/// Similarities of one entity to a set of prototypes, plus the active mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedVector {
    pub values: Vec<f64>,
    pub active: Vec<bool>,
}

impl TransformedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

/// Similarity of `embedding` to every prototype row, all entries active.
pub fn transform(embedding: &[f64], prototypes: &Matrix) -> Result<TransformedVector, ModelError> {
    if embedding.len() != prototypes.cols() {
        return Err(ModelError::DimensionMismatch { expected: prototypes.cols(), found: embedding.len() });
    }
    let e = Normalized::new(embedding);
    let values: Vec<f64> = prototypes
        .iter_rows()
        .map(|p| 1.0 + dot(&e.unit, &Normalized::new(p).unit))
        .collect();
    let active = vec![true; values.len()];
    Ok(TransformedVector { values, active })
}

/// Mask keeping the `k` largest values; ties go to the lower index.
pub fn top_k_mask(values: &[f64], k: usize) -> Vec<bool> {
    let mut mask = vec![false; values.len()];
    if k >= values.len() {
        mask.iter_mut().for_each(|m| *m = true);
        return mask;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    for &j in &order[..k] {
        mask[j] = true;
    }
    mask
}

/// Keeps the `k` most similar prototypes; the rest are zeroed and marked inactive.
pub fn k_filter(t: &TransformedVector, k: usize) -> Result<TransformedVector, ModelError> {
    if k == 0 || k > t.len() {
        return Err(ModelError::KOutOfRange { k, len: t.len() });
    }
    let active = top_k_mask(&t.values, k);
    let values = t.values.iter().zip(&active).map(|(&v, &a)| if a { v } else { 0.0 }).collect();
    Ok(TransformedVector { values, active })
}

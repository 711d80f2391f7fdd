//! Sampled-softmax recommendation losses and the ZeroSum score-difference penalty.

use super::graph::ScoreGraph;
use super::grads::Gradients;
use super::TrainError;
use crate::model::{Filtering, PrototypeModel};

/// A loss value with its gradient over all model parameters.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grads: Gradients,
}

/// Which entity the softmax runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Anchor {
    /// Softmax over items for a fixed user.
    User,
    /// Softmax over users for a fixed item.
    Item,
}

/// `(1/n) * sum_k (pos - neg_k)^2` and its partial derivatives. Zero for no negatives.
pub fn zerosum_reg(pos: f64, negs: &[f64]) -> (f64, f64, Vec<f64>) {
    if negs.is_empty() {
        return (0.0, 0.0, Vec::new());
    }
    let n = negs.len() as f64;
    let value = negs.iter().map(|s| (pos - s).powi(2)).sum::<f64>() / n;
    let g_pos = 2.0 / n * negs.iter().map(|s| pos - s).sum::<f64>();
    let g_negs = negs.iter().map(|s| -2.0 / n * (pos - s)).collect();
    (value, g_pos, g_negs)
}

/// Batch-mean softmax cross-entropy and ZeroSum over one side's examples.
///
/// `examples` are `(user, item)` positives; `negatives[k]` holds items for
/// [`Anchor::User`] and users for [`Anchor::Item`]. Gradients are scaled by
/// `w_rec` and `w_zs` and accumulated into the graph. Returns unweighted
/// `(rec, zerosum)` batch means.
pub(crate) fn softmax_terms(
    graph: &mut ScoreGraph<'_>,
    anchor: Anchor,
    examples: &[(usize, usize)],
    negatives: &[Vec<usize>],
    w_rec: f64,
    w_zs: f64,
) -> (f64, f64) {
    if examples.is_empty() {
        return (0.0, 0.0);
    }
    let inv_b = 1.0 / examples.len() as f64;
    let pair = |other: usize, &(user, item): &(usize, usize)| match anchor {
        Anchor::User => (user, other),
        Anchor::Item => (other, item),
    };
    let (mut rec, mut zs) = (0.0, 0.0);
    let mut scores = Vec::new();
    for (ex, negs) in examples.iter().zip(negatives) {
        scores.clear();
        scores.push(graph.score(ex.0, ex.1));
        for &o in negs {
            let (u, i) = pair(o, ex);
            scores.push(graph.score(u, i));
        }

        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum_exp.ln();
        rec += lse - scores[0];

        let (z, z_pos, z_negs) = zerosum_reg(scores[0], &scores[1..]);
        zs += z;

        let g0 = w_rec * ((scores[0] - lse).exp() - 1.0) + w_zs * z_pos;
        graph.add_score_grad(ex.0, ex.1, g0 * inv_b);
        for (k, &o) in negs.iter().enumerate() {
            let g = w_rec * (scores[k + 1] - lse).exp() + w_zs * z_negs[k];
            let (u, i) = pair(o, ex);
            graph.add_score_grad(u, i, g * inv_b);
        }
    }
    (rec * inv_b, zs * inv_b)
}

fn check_shapes(model: &PrototypeModel, batch: &[(usize, usize)], negatives: &[Vec<usize>], anchor: Anchor) -> Result<(), TrainError> {
    if batch.len() != negatives.len() {
        return Err(TrainError::Shape(format!("{} examples but {} negative lists", batch.len(), negatives.len())));
    }
    let (n, m) = (model.user_emb.rows(), model.item_emb.rows());
    let (neg_bound, what) = match anchor {
        Anchor::User => (m, "item"),
        Anchor::Item => (n, "user"),
    };
    for (&(u, i), negs) in batch.iter().zip(negatives) {
        if u >= n || i >= m {
            return Err(TrainError::Shape(format!("pair ({u},{i}) outside {n}x{m}")));
        }
        if let Some(bad) = negs.iter().find(|&&x| x >= neg_bound) {
            return Err(TrainError::Shape(format!("negative {what} {bad} out of range")));
        }
    }
    Ok(())
}

fn side_loss(
    model: &PrototypeModel,
    anchor: Anchor,
    pairs: &[(usize, usize)],
    negatives: &[Vec<usize>],
    filtering: Filtering,
    zerosum: bool,
) -> Result<LossValue, TrainError> {
    check_shapes(model, pairs, negatives, anchor)?;
    let mut graph = ScoreGraph::new(model, filtering);
    let (w_rec, w_zs) = if zerosum { (0.0, 1.0) } else { (1.0, 0.0) };
    let (rec, zs) = softmax_terms(&mut graph, anchor, pairs, negatives, w_rec, w_zs);
    let mut grads = Gradients::zeros_like(model);
    graph.backward(&mut grads);
    Ok(LossValue { value: if zerosum { zs } else { rec }, grads })
}

fn swap(batch: &[(usize, usize)]) -> Vec<(usize, usize)> {
    batch.iter().map(|&(a, b)| (b, a)).collect()
}

/// User-side sampled softmax: for each `(user, positive item)` the
/// cross-entropy of the positive against `negatives[k]` (items), batch-averaged.
pub fn rec_loss_user(model: &PrototypeModel, batch: &[(usize, usize)], negatives: &[Vec<usize>], filtering: Filtering) -> Result<LossValue, TrainError> {
    side_loss(model, Anchor::User, batch, negatives, filtering, false)
}

/// Item-side mirror: `batch` holds `(item, positive user)`, negatives are users.
pub fn rec_loss_item(model: &PrototypeModel, batch: &[(usize, usize)], negatives: &[Vec<usize>], filtering: Filtering) -> Result<LossValue, TrainError> {
    side_loss(model, Anchor::Item, &swap(batch), negatives, filtering, false)
}

/// Batch-mean ZeroSum penalty over user-side examples.
pub fn zerosum_loss_user(model: &PrototypeModel, batch: &[(usize, usize)], negatives: &[Vec<usize>], filtering: Filtering) -> Result<LossValue, TrainError> {
    side_loss(model, Anchor::User, batch, negatives, filtering, true)
}

/// Batch-mean ZeroSum penalty over item-side examples, `batch` as `(item, positive user)`.
pub fn zerosum_loss_item(model: &PrototypeModel, batch: &[(usize, usize)], negatives: &[Vec<usize>], filtering: Filtering) -> Result<LossValue, TrainError> {
    side_loss(model, Anchor::Item, &swap(batch), negatives, filtering, true)
}

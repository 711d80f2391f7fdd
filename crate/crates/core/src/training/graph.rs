//! Batched affinity evaluation with a hand-written backward pass.
//!
//! Each entity touched by a batch gets one cache slot holding its
//! normalized embedding, prototype similarities, k-filter mask and
//! cross-space projection. Scores read from the slots; upstream gradients
//! are accumulated per slot and pulled back to the parameters once in
//! [`ScoreGraph::backward`]. Masks are fixed for the step, so the filtered
//! entries pass gradient and the rest pass none.

use std::collections::HashMap;

use super::grads::Gradients;
use crate::matrix::{axpy, dot, Matrix};
use crate::model::{normalize_rows, top_k_mask, Filtering, ModelKind, Normalized, PrototypeModel};

struct Slot {
    index: usize,
    emb: Normalized,
    /// Unfiltered shifted-cosine similarities.
    sims: Vec<f64>,
    star: Vec<f64>,
    active: Vec<bool>,
    hat: Vec<f64>,
    g_star: Vec<f64>,
    g_hat: Vec<f64>,
    /// Direct embedding gradient (MF scores).
    g_emb: Vec<f64>,
}

struct Side<'a> {
    emb: &'a Matrix,
    protos: Vec<Normalized>,
    proj: &'a Matrix,
    k: Option<usize>,
    slot_of: HashMap<usize, usize>,
    slots: Vec<Slot>,
}

impl<'a> Side<'a> {
    fn new(kind: ModelKind, emb: &'a Matrix, protos: &Matrix, proj: &'a Matrix, k: Option<usize>) -> Self {
        let protos = if kind == ModelKind::Protomf { normalize_rows(protos) } else { Vec::new() };
        Side { emb, protos, proj, k, slot_of: HashMap::new(), slots: Vec::new() }
    }

    fn slot(&mut self, index: usize) -> usize {
        if let Some(&s) = self.slot_of.get(&index) {
            return s;
        }
        let raw = self.emb.row(index);
        let emb = Normalized::new(raw);
        let sims: Vec<f64> = self.protos.iter().map(|p| 1.0 + dot(&emb.unit, &p.unit)).collect();
        let active = match self.k {
            Some(k) => top_k_mask(&sims, k),
            None => vec![true; sims.len()],
        };
        let star = sims.iter().zip(&active).map(|(&v, &a)| if a { v } else { 0.0 }).collect();
        let hat = if self.protos.is_empty() { Vec::new() } else { self.proj.mul_vec(raw) };
        let s = self.slots.len();
        self.slots.push(Slot {
            index,
            g_star: vec![0.0; sims.len()],
            g_hat: vec![0.0; hat.len()],
            g_emb: vec![0.0; raw.len()],
            emb,
            sims,
            star,
            active,
            hat,
        });
        self.slot_of.insert(index, s);
        s
    }

    fn backward(&self, g_emb: &mut Matrix, g_protos: &mut Matrix, g_proj: &mut Matrix) {
        for slot in &self.slots {
            let raw = self.emb.row(slot.index);
            let ge = g_emb.row_mut(slot.index);
            axpy(1.0, &slot.g_emb, ge);
            for (j, &gh) in slot.g_hat.iter().enumerate() {
                if gh != 0.0 {
                    axpy(gh, raw, g_proj.row_mut(j));
                    axpy(gh, self.proj.row(j), ge);
                }
            }
            for (j, p) in self.protos.iter().enumerate() {
                let gs = slot.g_star[j];
                if !slot.active[j] || gs == 0.0 {
                    continue;
                }
                let cos = slot.sims[j] - 1.0;
                slot.emb.add_cos_grad(&p.unit, cos, gs, ge);
                p.add_cos_grad(&slot.emb.unit, cos, gs, g_protos.row_mut(j));
            }
        }
    }
}

pub(crate) struct ScoreGraph<'a> {
    kind: ModelKind,
    users: Side<'a>,
    items: Side<'a>,
}

impl<'a> ScoreGraph<'a> {
    pub fn new(model: &'a PrototypeModel, filtering: Filtering) -> Self {
        let kind = model.kind;
        ScoreGraph {
            kind,
            users: Side::new(kind, &model.user_emb, &model.user_protos, &model.user_proj, filtering.user.then_some(model.k_user)),
            items: Side::new(kind, &model.item_emb, &model.item_protos, &model.item_proj, filtering.item.then_some(model.k_item)),
        }
    }

    pub fn score(&mut self, user: usize, item: usize) -> f64 {
        let su = self.users.slot(user);
        let si = self.items.slot(item);
        let (u, i) = (&self.users.slots[su], &self.items.slots[si]);
        match self.kind {
            ModelKind::Mf => dot(self.users.emb.row(user), self.items.emb.row(item)),
            ModelKind::Protomf => dot(&u.star, &i.hat) + dot(&u.hat, &i.star),
        }
    }

    /// Adds `g * d score(user, item)` to the slot accumulators. The pair must have been scored.
    pub fn add_score_grad(&mut self, user: usize, item: usize, g: f64) {
        if g == 0.0 {
            return;
        }
        let su = self.users.slot_of[&user];
        let si = self.items.slot_of[&item];
        let (u, i) = (&mut self.users.slots[su], &mut self.items.slots[si]);
        match self.kind {
            ModelKind::Mf => {
                axpy(g, self.items.emb.row(item), &mut u.g_emb);
                axpy(g, self.users.emb.row(user), &mut i.g_emb);
            }
            ModelKind::Protomf => {
                axpy(g, &i.hat, &mut u.g_star);
                axpy(g, &u.star, &mut i.g_hat);
                axpy(g, &i.star, &mut u.g_hat);
                axpy(g, &u.hat, &mut i.g_star);
            }
        }
    }

    pub fn user_indices(&self) -> Vec<usize> {
        self.users.slots.iter().map(|s| s.index).collect()
    }

    pub fn item_indices(&self) -> Vec<usize> {
        self.items.slots.iter().map(|s| s.index).collect()
    }

    pub fn backward(&self, grads: &mut Gradients) {
        self.users.backward(&mut grads.user_emb, &mut grads.user_protos, &mut grads.user_proj);
        self.items.backward(&mut grads.item_emb, &mut grads.item_protos, &mut grads.item_proj);
    }
}

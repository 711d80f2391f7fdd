//! Prototype-based matrix factorization: parameters, representations and scoring.
//!
//! A user embedding `u` is represented by its shifted-cosine similarities to
//! the user prototypes (`u*`, length `L_u`) and by a linear map into the item
//! prototype space (`û = W_u u`, length `L_i`); items mirror this. The
//! affinity is `u* · î + û · i*`.

mod checkpoint;
mod similarity;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use similarity::{
    k_filter, normalize_rows, shifted_cosine, shifted_cosine_floored, top_k_mask, transform, Normalized, TransformedVector, NORM_EPS,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, Matrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("zero-norm vector has no cosine similarity")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k={k} outside [1, {len}]")]
    KOutOfRange { k: usize, len: usize },
    #[error("{what} index {index} out of range (< {len})")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Plain dot-product matrix factorization baseline.
    Mf,
    #[default]
    Protomf,
}

/// Which sides apply prototype k-filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Filtering {
    pub user: bool,
    pub item: bool,
}

impl Filtering {
    pub const OFF: Filtering = Filtering { user: false, item: false };
    pub const BOTH: Filtering = Filtering { user: true, item: true };

    pub fn from_flag(on: bool) -> Self {
        if on {
            Self::BOTH
        } else {
            Self::OFF
        }
    }
}

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub user_protos: usize,
    pub item_protos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeModel {
    pub kind: ModelKind,
    /// `N x d`
    pub user_emb: Matrix,
    /// `M x d`
    pub item_emb: Matrix,
    /// `L_u x d`
    pub user_protos: Matrix,
    /// `L_i x d`
    pub item_protos: Matrix,
    /// `W_u`, `L_i x d`: user embedding into the item prototype space.
    pub user_proj: Matrix,
    /// `W_i`, `L_u x d`: item embedding into the user prototype space.
    pub item_proj: Matrix,
    pub k_user: usize,
    pub k_item: usize,
    /// Filtering the model was trained with; used by default at inference.
    pub filtering: Filtering,
}

/// One side's representation: prototype similarities (masked) and the cross-space projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SideRepr {
    pub star: TransformedVector,
    pub hat: Vec<f64>,
}

pub const INIT_RANGE: f64 = 0.05;

impl PrototypeModel {
    /// All matrices drawn from `U[-0.05, 0.05]`, in the order
    /// user_emb, item_emb, user_protos, item_protos, user_proj, item_proj.
    pub fn random<R: Rng + ?Sized>(kind: ModelKind, dims: Dims, k_user: usize, k_item: usize, filtering: Filtering, rng: &mut R) -> Result<Self, ModelError> {
        let (a, b) = (-INIT_RANGE, INIT_RANGE);
        let Dims { n_users, n_items, dim, user_protos, item_protos } = dims;
        let model = PrototypeModel {
            kind,
            user_emb: Matrix::uniform(n_users, dim, a, b, rng),
            item_emb: Matrix::uniform(n_items, dim, a, b, rng),
            user_protos: Matrix::uniform(user_protos, dim, a, b, rng),
            item_protos: Matrix::uniform(item_protos, dim, a, b, rng),
            user_proj: Matrix::uniform(item_protos, dim, a, b, rng),
            item_proj: Matrix::uniform(user_protos, dim, a, b, rng),
            k_user,
            k_item,
            filtering,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_users: self.user_emb.rows(),
            n_items: self.item_emb.rows(),
            dim: self.user_emb.cols(),
            user_protos: self.user_protos.rows(),
            item_protos: self.item_protos.rows(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.dims();
        let bad = |m: String| Err(ModelError::Invalid(m));
        if d.dim == 0 || d.user_protos == 0 || d.item_protos == 0 {
            return bad(format!("d={}, L_u={}, L_i={} must all be >= 1", d.dim, d.user_protos, d.item_protos));
        }
        let shapes = [
            ("item_emb", &self.item_emb, d.n_items, d.dim),
            ("user_protos", &self.user_protos, d.user_protos, d.dim),
            ("item_protos", &self.item_protos, d.item_protos, d.dim),
            ("user_proj", &self.user_proj, d.item_protos, d.dim),
            ("item_proj", &self.item_proj, d.user_protos, d.dim),
        ];
        for (name, m, r, c) in shapes {
            if (m.rows(), m.cols()) != (r, c) {
                return bad(format!("{name} is {}x{}, expected {r}x{c}", m.rows(), m.cols()));
            }
        }
        if !(1..=d.user_protos).contains(&self.k_user) || !(1..=d.item_protos).contains(&self.k_item) {
            return bad(format!("k_u={} / k_i={} outside prototype counts {} / {}", self.k_user, self.k_item, d.user_protos, d.item_protos));
        }
        if !self.params().iter().all(|m| m.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    /// Parameter matrices in canonical order.
    pub fn params(&self) -> [&Matrix; 6] {
        [&self.user_emb, &self.item_emb, &self.user_protos, &self.item_protos, &self.user_proj, &self.item_proj]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.user_emb,
            &mut self.item_emb,
            &mut self.user_protos,
            &mut self.item_protos,
            &mut self.user_proj,
            &mut self.item_proj,
        ]
    }

    fn check_user(&self, user: usize) -> Result<(), ModelError> {
        let len = self.user_emb.rows();
        if user >= len {
            return Err(ModelError::IndexOutOfRange { what: "user", index: user, len });
        }
        Ok(())
    }

    fn check_item(&self, item: usize) -> Result<(), ModelError> {
        let len = self.item_emb.rows();
        if item >= len {
            return Err(ModelError::IndexOutOfRange { what: "item", index: item, len });
        }
        Ok(())
    }

    fn side(emb: &[f64], protos: &[Normalized], proj: &Matrix, filter_k: Option<usize>) -> SideRepr {
        let e = Normalized::new(emb);
        let values: Vec<f64> = protos.iter().map(|p| 1.0 + dot(&e.unit, &p.unit)).collect();
        let star = match filter_k {
            Some(k) => {
                let active = top_k_mask(&values, k);
                let values = values.iter().zip(&active).map(|(&v, &a)| if a { v } else { 0.0 }).collect();
                TransformedVector { values, active }
            }
            None => TransformedVector { active: vec![true; values.len()], values },
        };
        SideRepr { star, hat: proj.mul_vec(emb) }
    }

    /// `u*` (k-filtered when asked) and `û = W_u u`.
    pub fn user_repr(&self, user: usize, filter: bool) -> Result<SideRepr, ModelError> {
        self.check_user(user)?;
        Ok(Self::side(self.user_emb.row(user), &normalize_rows(&self.user_protos), &self.user_proj, filter.then_some(self.k_user)))
    }

    /// `i*` (k-filtered when asked) and `î = W_i i`.
    pub fn item_repr(&self, item: usize, filter: bool) -> Result<SideRepr, ModelError> {
        self.check_item(item)?;
        Ok(Self::side(self.item_emb.row(item), &normalize_rows(&self.item_protos), &self.item_proj, filter.then_some(self.k_item)))
    }

    pub fn affinity(&self, user: usize, item: usize, filtering: Filtering) -> Result<f64, ModelError> {
        self.check_user(user)?;
        self.check_item(item)?;
        if self.kind == ModelKind::Mf {
            return Ok(dot(self.user_emb.row(user), self.item_emb.row(item)));
        }
        let u = self.user_repr(user, filtering.user)?;
        let i = self.item_repr(item, filtering.item)?;
        Ok(dot(&u.star.values, &i.hat) + dot(&u.hat, &i.star.values))
    }

    /// Scores for many candidates of one user, sharing the user-side work.
    pub fn score_items(&self, user: usize, candidates: &[usize], filtering: Filtering) -> Result<Vec<f64>, ModelError> {
        if candidates.is_empty() {
            return Err(ModelError::EmptyCandidates);
        }
        self.check_user(user)?;
        for &i in candidates {
            self.check_item(i)?;
        }
        if self.kind == ModelKind::Mf {
            let u = self.user_emb.row(user);
            return Ok(candidates.iter().map(|&i| dot(u, self.item_emb.row(i))).collect());
        }
        let u = self.user_repr(user, filtering.user)?;
        let item_protos = normalize_rows(&self.item_protos);
        let k = filtering.item.then_some(self.k_item);
        Ok(candidates
            .iter()
            .map(|&i| {
                let r = Self::side(self.item_emb.row(i), &item_protos, &self.item_proj, k);
                dot(&u.star.values, &r.hat) + dot(&u.hat, &r.star.values)
            })
            .collect())
    }
}

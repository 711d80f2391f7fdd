//! Loss composition, analytic gradients and the optimization loop.

mod graph;
mod grads;
mod losses;
mod optim;
mod regularizers;

pub use grads::Gradients;
pub use losses::{rec_loss_item, rec_loss_user, zerosum_loss_item, zerosum_loss_user, zerosum_reg, LossValue};
pub use optim::{Optimizer, OptimizerConfig};
pub use regularizers::{distributing_reg, mean_pairwise_abs_cosine, proto_collab_reg, CollabReg, RegTerm};

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{InteractionTable, SplitDataset};
use crate::matrix::Matrix;
use crate::model::{Dims, Filtering, ModelError, ModelKind, PrototypeModel};
use crate::seed::rng_for;
use graph::ScoreGraph;
use losses::{softmax_terms, Anchor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite {component} at epoch {epoch}, step {step}")]
    NonFinite { component: &'static str, epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training data: {0}")]
    Data(String),
}

fn d_dim() -> usize {
    32
}
fn d_protos() -> usize {
    16
}
fn d_negatives() -> usize {
    10
}
fn d_lr() -> f64 {
    1e-3
}
fn d_epochs() -> usize {
    30
}
fn d_batch() -> usize {
    256
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub model_kind: ModelKind,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_protos")]
    pub user_protos: usize,
    #[serde(default = "d_protos")]
    pub item_protos: usize,
    /// Prototypes kept per user when user filtering is on; defaults to all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_user: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_item: Option<usize>,
    #[serde(default)]
    pub enable_user_filtering: bool,
    #[serde(default)]
    pub enable_item_filtering: bool,
    #[serde(default)]
    pub lambda_proto_to_user: f64,
    #[serde(default)]
    pub lambda_user_to_proto: f64,
    #[serde(default)]
    pub lambda_proto_to_item: f64,
    #[serde(default)]
    pub lambda_item_to_proto: f64,
    #[serde(default)]
    pub lambda_dist_user: f64,
    #[serde(default)]
    pub lambda_dist_item: f64,
    #[serde(default)]
    pub lambda_zerosum: f64,
    #[serde(default = "d_negatives")]
    pub n_negatives_train: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl TrainConfig {
    pub fn k_user(&self) -> usize {
        self.k_user.unwrap_or(self.user_protos)
    }

    pub fn k_item(&self) -> usize {
        self.k_item.unwrap_or(self.item_protos)
    }

    pub fn filtering(&self) -> Filtering {
        Filtering { user: self.enable_user_filtering, item: self.enable_item_filtering }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.dim == 0 || self.user_protos == 0 || self.item_protos == 0 {
            return bad("dim, user_protos and item_protos must be >= 1".into());
        }
        if !(1..=self.user_protos).contains(&self.k_user()) || !(1..=self.item_protos).contains(&self.k_item()) {
            return bad(format!("k_user={} / k_item={} must lie in [1, L]", self.k_user(), self.k_item()));
        }
        let lambdas = [
            ("lambda_proto_to_user", self.lambda_proto_to_user),
            ("lambda_user_to_proto", self.lambda_user_to_proto),
            ("lambda_proto_to_item", self.lambda_proto_to_item),
            ("lambda_item_to_proto", self.lambda_item_to_proto),
            ("lambda_dist_user", self.lambda_dist_user),
            ("lambda_dist_item", self.lambda_dist_item),
            ("lambda_zerosum", self.lambda_zerosum),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.n_negatives_train == 0 {
            return bad("epochs, batch_size and n_negatives_train must be >= 1".into());
        }
        Ok(())
    }
}

/// Per-component losses; `total` is their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec_user: f64,
    pub rec_item: f64,
    pub reg_proto_to_user: f64,
    pub reg_user_to_proto: f64,
    pub reg_proto_to_item: f64,
    pub reg_item_to_proto: f64,
    pub dist_user: f64,
    pub dist_item: f64,
    pub zerosum: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("rec_user", self.rec_user),
            ("rec_item", self.rec_item),
            ("reg_proto_to_user", self.reg_proto_to_user),
            ("reg_user_to_proto", self.reg_user_to_proto),
            ("reg_proto_to_item", self.reg_proto_to_item),
            ("reg_item_to_proto", self.reg_item_to_proto),
            ("dist_user", self.dist_user),
            ("dist_item", self.dist_item),
            ("zerosum", self.zerosum),
            ("total", self.total),
        ]
    }

    pub fn weighted_total(&self, c: &TrainConfig) -> f64 {
        self.rec_user
            + self.rec_item
            + c.lambda_proto_to_user * self.reg_proto_to_user
            + c.lambda_user_to_proto * self.reg_user_to_proto
            + c.lambda_proto_to_item * self.reg_proto_to_item
            + c.lambda_item_to_proto * self.reg_item_to_proto
            + c.lambda_dist_user * self.dist_user
            + c.lambda_dist_item * self.dist_item
            + c.lambda_zerosum * self.zerosum
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        self.named().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }

    fn mean(parts: &[LossBreakdown], config: &TrainConfig) -> LossBreakdown {
        let k = parts.len().max(1) as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / k;
        let mut out = LossBreakdown {
            rec_user: avg(|b| b.rec_user),
            rec_item: avg(|b| b.rec_item),
            reg_proto_to_user: avg(|b| b.reg_proto_to_user),
            reg_user_to_proto: avg(|b| b.reg_user_to_proto),
            reg_proto_to_item: avg(|b| b.reg_proto_to_item),
            reg_item_to_proto: avg(|b| b.reg_item_to_proto),
            dist_user: avg(|b| b.dist_user),
            dist_item: avg(|b| b.dist_item),
            zerosum: avg(|b| b.zerosum),
            total: 0.0,
        };
        out.total = out.weighted_total(config);
        out
    }
}

/// Negatives for one batch: items per user-side example, users per item-side example.
#[derive(Debug, Clone, Default)]
pub struct BatchNegatives {
    pub items: Vec<Vec<usize>>,
    pub users: Vec<Vec<usize>>,
}

fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(m.row(r));
    }
    out
}

fn scatter_rows(src: &Matrix, rows: &[usize], scale: f64, dst: &mut Matrix) {
    for (k, &r) in rows.iter().enumerate() {
        crate::matrix::axpy(scale, src.row(k), dst.row_mut(r));
    }
}

/// Full training objective on one batch of `(user, item)` positives.
///
/// Collaborative regularizers run over the users and items the batch
/// touches (positives and sampled negatives). Gradients of the weighted
/// total are added into `grads`.
pub fn batch_loss(
    model: &PrototypeModel,
    config: &TrainConfig,
    positives: &[(usize, usize)],
    negatives: &BatchNegatives,
    grads: &mut Gradients,
) -> LossBreakdown {
    let mut graph = ScoreGraph::new(model, config.filtering());
    let zs = config.lambda_zerosum;
    let (rec_user, zs_user) = softmax_terms(&mut graph, Anchor::User, positives, &negatives.items, 1.0, zs);
    let (rec_item, zs_item) = softmax_terms(&mut graph, Anchor::Item, positives, &negatives.users, 1.0, zs);
    graph.backward(grads);

    let mut b = LossBreakdown { rec_user, rec_item, zerosum: zs_user + zs_item, ..Default::default() };
    if model.kind == ModelKind::Protomf {
        let users = graph.user_indices();
        let items = graph.item_indices();
        let regs = [
            (&model.user_emb, &model.user_protos, &users, config.lambda_proto_to_user, config.lambda_user_to_proto, true),
            (&model.item_emb, &model.item_protos, &items, config.lambda_proto_to_item, config.lambda_item_to_proto, false),
        ];
        for (emb, protos, rows, w_pe, w_ep, is_user) in regs {
            if rows.is_empty() {
                continue;
            }
            let r = proto_collab_reg(&gather_rows(emb, rows), protos).expect("shapes match the model");
            let (g_emb, g_protos) = if is_user {
                (&mut grads.user_emb, &mut grads.user_protos)
            } else {
                (&mut grads.item_emb, &mut grads.item_protos)
            };
            for (term, w) in [(&r.proto_to_entity, w_pe), (&r.entity_to_proto, w_ep)] {
                if w != 0.0 {
                    scatter_rows(&term.grad_entities, rows, w, g_emb);
                    crate::matrix::axpy(w, term.grad_protos.as_slice(), g_protos.as_mut_slice());
                }
            }
            if is_user {
                b.reg_proto_to_user = r.proto_to_entity.value;
                b.reg_user_to_proto = r.entity_to_proto.value;
            } else {
                b.reg_proto_to_item = r.proto_to_entity.value;
                b.reg_item_to_proto = r.entity_to_proto.value;
            }
        }

        let (du, gu) = distributing_reg(&model.user_protos);
        let (di, gi) = distributing_reg(&model.item_protos);
        if config.lambda_dist_user != 0.0 {
            crate::matrix::axpy(config.lambda_dist_user, gu.as_slice(), grads.user_protos.as_mut_slice());
        }
        if config.lambda_dist_item != 0.0 {
            crate::matrix::axpy(config.lambda_dist_item, gi.as_slice(), grads.item_protos.as_mut_slice());
        }
        b.dist_user = du;
        b.dist_item = di;
    }
    b.total = b.weighted_total(config);
    b
}

/// Up to `n` distinct values from `0..universe` missing from the sorted `exclude`.
fn sample_excluding(rng: &mut ChaCha8Rng, universe: usize, exclude: &[usize], n: usize) -> Vec<usize> {
    let available = universe - exclude.len();
    let take = n.min(available);
    if take == 0 {
        return Vec::new();
    }
    if available <= 4 * take {
        let pool: Vec<usize> = (0..universe).filter(|x| exclude.binary_search(x).is_err()).collect();
        return index::sample(rng, pool.len(), take).into_iter().map(|k| pool[k]).collect();
    }
    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        let x = rng.gen_range(0..universe);
        if exclude.binary_search(&x).is_err() && !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub breakdown: LossBreakdown,
    /// Weighted total of every optimizer step, in order.
    pub step_totals: Vec<f64>,
}

/// Owns the model and optimizer state during training.
pub struct Trainer<'a> {
    config: TrainConfig,
    train: &'a InteractionTable,
    model: PrototypeModel,
    optimizer: Optimizer,
    grads: Gradients,
    shuffle_rng: ChaCha8Rng,
    negative_rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, train: &'a InteractionTable) -> Result<Self, TrainError> {
        config.validate()?;
        if train.num_interactions() == 0 {
            return Err(TrainError::Data("no training interactions".into()));
        }
        let dims = Dims {
            n_users: train.num_users(),
            n_items: train.num_items(),
            dim: config.dim,
            user_protos: config.user_protos,
            item_protos: config.item_protos,
        };
        let mut init = rng_for(config.seed, "init");
        let model = PrototypeModel::random(config.model_kind, dims, config.k_user(), config.k_item(), config.filtering(), &mut init)?;
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.weight_decay, &model);
        Ok(Trainer {
            grads: Gradients::zeros_like(&model),
            shuffle_rng: rng_for(config.seed, "shuffle"),
            negative_rng: rng_for(config.seed, "negatives"),
            config,
            train,
            model,
            optimizer,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &PrototypeModel {
        &self.model
    }

    pub fn into_model(self) -> PrototypeModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn sample_negatives(&mut self, positives: &[(usize, usize)]) -> BatchNegatives {
        let n = self.config.n_negatives_train;
        let (nu, ni) = (self.train.num_users(), self.train.num_items());
        let mut out = BatchNegatives::default();
        for &(u, i) in positives {
            out.items.push(sample_excluding(&mut self.negative_rng, ni, self.train.user_items(u), n));
            out.users.push(sample_excluding(&mut self.negative_rng, nu, self.train.item_users(i), n));
        }
        out
    }

    /// One optimizer step on the given positives with freshly drawn negatives.
    pub fn step(&mut self, positives: &[(usize, usize)], step_index: usize) -> Result<LossBreakdown, TrainError> {
        let negatives = self.sample_negatives(positives);
        self.grads.clear();
        let b = batch_loss(&self.model, &self.config, positives, &negatives, &mut self.grads);
        if let Some(component) = b.non_finite_component() {
            return Err(TrainError::NonFinite { component, epoch: self.epoch, step: step_index });
        }
        if !self.grads.is_finite() {
            return Err(TrainError::NonFinite { component: "gradient", epoch: self.epoch, step: step_index });
        }
        self.optimizer.step(&mut self.model, &self.grads);
        Ok(b)
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog, TrainError> {
        let mut order: Vec<usize> = (0..self.train.num_interactions()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let pairs = self.train.pairs();
        let mut parts = Vec::new();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| pairs[k]));
            parts.push(self.step(&batch, step)?);
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            breakdown: LossBreakdown::mean(&parts, &self.config),
            step_totals: parts.iter().map(|b| b.total).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PrototypeModel,
    pub log: Vec<LossBreakdown>,
    /// Validation HR@10 per epoch, when a validation split was given.
    pub validation_hr: Vec<f64>,
    /// 1-based epoch of the returned model.
    pub best_epoch: usize,
}

/// Fixed-epoch training on the train half of a split.
pub fn train(config: &TrainConfig, data: &SplitDataset) -> Result<TrainOutcome, TrainError> {
    train_with_validation(config, &data.train, None)
}

/// Trains on `train`. With a validation split the model of the epoch with
/// the best validation HR@10 is returned (earliest on ties); without one,
/// the final model.
pub fn train_with_validation(config: &TrainConfig, train: &InteractionTable, validation: Option<&SplitDataset>) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config.clone(), train)?;
    let mut log = Vec::with_capacity(config.epochs);
    let mut validation_hr = Vec::new();
    let mut best: Option<(f64, usize, PrototypeModel)> = None;
    for _ in 0..config.epochs {
        let e = trainer.run_epoch()?;
        log.push(e.breakdown);
        if let Some(v) = validation {
            let hr = crate::eval::hit_rate(trainer.model(), &v.test, trainer.model().filtering)
                .map_err(|e| TrainError::Data(e.to_string()))?;
            validation_hr.push(hr);
            if best.as_ref().is_none_or(|(b, _, _)| hr > *b) {
                best = Some((hr, e.epoch, trainer.model().clone()));
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, model)) => (model, epoch),
        None => (trainer.into_model(), config.epochs),
    };
    Ok(TrainOutcome { model, log, validation_hr, best_epoch })
}

pub const LOSS_LOG_HEADER: &str = "# protofair-losslog v1";
pub const LOSS_LOG_COLUMNS: &str = "epoch,rec_user,rec_item,reg_pu,reg_up,reg_pi,reg_ip,dist_u,dist_i,zerosum,total";

/// Append-only per-epoch loss log.
pub struct LossLog {
    file: File,
}

impl LossLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{LOSS_LOG_HEADER}")?;
        writeln!(file, "{LOSS_LOG_COLUMNS}")?;
        drop(file);
        Ok(LossLog { file: OpenOptions::new().append(true).open(path)? })
    }

    pub fn append(&mut self, epoch: usize, b: &LossBreakdown) -> std::io::Result<()> {
        let vals: Vec<String> = b.named().iter().map(|(_, v)| v.to_string()).collect();
        writeln!(self.file, "{epoch},{}", vals.join(","))?;
        self.file.flush()
    }
}

//! Prototype-based matrix factorization for implicit feedback, with two
//! mechanisms that target popularity bias: per-entity prototype k-filtering
//! and a regularizer that spreads prototypes apart on the unit sphere.
//!
//! The crate covers the whole experimental pipeline: ingesting and grouping
//! interaction data, leave-one-out splitting, training with exact analytic
//! gradients, utility and fairness evaluation, nearest-prototype explanations
//! and 2-D projection exports.

pub mod cli;
pub mod data;
pub mod eval;
pub mod explain;
pub mod matrix;
pub mod model;
pub mod seed;
pub mod training;

pub use data::{GroupAssignment, InteractionTable, RawInteraction, SplitDataset};
pub use eval::EvalReport;
pub use matrix::Matrix;
pub use model::{Filtering, ModelKind, PrototypeModel};
pub use training::{LossBreakdown, TrainConfig};

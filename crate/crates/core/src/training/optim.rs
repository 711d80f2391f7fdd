//! SGD and Adam over the six parameter matrices.

use serde::{Deserialize, Serialize};

use super::grads::Gradients;
use crate::model::PrototypeModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

/// Dense optimizer state. Weight decay is added to the gradient (L2 penalty).
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, lr: f64, weight_decay: f64, model: &PrototypeModel) -> Self {
        let (m, v) = match config {
            OptimizerConfig::Sgd => (Vec::new(), Vec::new()),
            OptimizerConfig::Adam { .. } => {
                let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.as_slice().len()]).collect();
                (zeros.clone(), zeros)
            }
        };
        Optimizer { config, lr, weight_decay, t: 0, m, v }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, model: &mut PrototypeModel, grads: &Gradients) {
        self.t += 1;
        let wd = self.weight_decay;
        match self.config {
            OptimizerConfig::Sgd => {
                for (p, g) in model.params_mut().into_iter().zip(grads.parts()) {
                    for (x, &gx) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *x -= self.lr * (gx + wd * *x);
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                let params = model.params_mut().into_iter().zip(grads.parts());
                for ((p, g), (m, v)) in params.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    for (((x, &gx), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let gx = gx + wd * *x;
                        *mi = beta1 * *mi + (1.0 - beta1) * gx;
                        *vi = beta2 * *vi + (1.0 - beta2) * gx * gx;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *x -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, Filtering, ModelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> PrototypeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dims = Dims { n_users: 1, n_items: 1, dim: 1, user_protos: 1, item_protos: 1 };
        PrototypeModel::random(ModelKind::Protomf, dims, 1, 1, Filtering::OFF, &mut rng).unwrap()
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut model = tiny();
        let before = model.user_emb.get(0, 0);
        let mut g = Gradients::zeros_like(&model);
        g.user_emb.set(0, 0, 3.0);
        let mut opt = Optimizer::new(OptimizerConfig::default(), 0.01, 0.0, &model);
        opt.step(&mut model, &g);
        // bias-corrected m/sqrt(v) = g/|g| on the first step
        assert!((before - model.user_emb.get(0, 0) - 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(model.item_emb, tiny().item_emb, "zero gradient leaves parameters fixed");
    }

    #[test]
    fn sgd_step() {
        let mut model = tiny();
        let before = model.item_proj.get(0, 0);
        let mut g = Gradients::zeros_like(&model);
        g.item_proj.set(0, 0, -2.0);
        Optimizer::new(OptimizerConfig::Sgd, 0.5, 0.0, &model).step(&mut model, &g);
        assert!((model.item_proj.get(0, 0) - (before + 1.0)).abs() < 1e-15);
    }
}

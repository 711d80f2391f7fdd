use protofair::model::ModelKind;
use protofair::training::{
    batch_loss, distributing_reg, proto_collab_reg, rec_loss_item, rec_loss_user, zerosum_loss_item, zerosum_loss_user, BatchNegatives,
    Gradients, LossValue, TrainConfig,
};
use protofair::{Matrix, PrototypeModel};
use rand::Rng;

use super::{fd_model, fd_vec, grad_instance, max_rel_err, rng, GradInstance};

pub const COMPONENTS: [&str; 11] = [
    "rec_user",
    "rec_item",
    "zerosum_user",
    "zerosum_item",
    "reg_proto_to_user",
    "reg_user_to_proto",
    "reg_proto_to_item",
    "reg_item_to_proto",
    "dist_user",
    "dist_item",
    "full_objective",
];

fn model_err(model: &PrototypeModel, analytic: &Gradients, f: impl Fn(&PrototypeModel) -> f64) -> f64 {
    let numeric = fd_model(model, f);
    analytic.parts().iter().zip(&numeric).map(|(a, n)| max_rel_err(a.as_slice(), n)).fold(0.0, f64::max)
}

fn swapped(batch: &[(usize, usize)]) -> Vec<(usize, usize)> {
    batch.iter().map(|&(u, i)| (i, u)).collect()
}

type SideLoss = fn(&PrototypeModel, &[(usize, usize)], &[Vec<usize>], protofair::Filtering) -> Result<LossValue, protofair::training::TrainError>;

fn side_err(inst: &GradInstance, loss: SideLoss, item_anchor: bool) -> f64 {
    let (batch, negs) = if item_anchor {
        (swapped(&inst.batch), &inst.user_negatives)
    } else {
        (inst.batch.clone(), &inst.item_negatives)
    };
    let lv = loss(&inst.model, &batch, negs, inst.filtering).unwrap();
    model_err(&inst.model, &lv.grads, |m| loss(m, &batch, negs, inst.filtering).unwrap().value)
}

/// Checks one regularizer over the entity and prototype matrices.
fn collab_err(entities: &Matrix, protos: &Matrix, first: bool) -> f64 {
    let pick = |e: &Matrix, p: &Matrix| {
        let r = proto_collab_reg(e, p).unwrap();
        if first {
            r.proto_to_entity
        } else {
            r.entity_to_proto
        }
    };
    let t = pick(entities, protos);
    let ge = fd_vec(entities.as_slice(), |x| pick(&Matrix::from_vec(entities.rows(), entities.cols(), x.to_vec()), protos).value);
    let gp = fd_vec(protos.as_slice(), |x| pick(entities, &Matrix::from_vec(protos.rows(), protos.cols(), x.to_vec())).value);
    max_rel_err(t.grad_entities.as_slice(), &ge).max(max_rel_err(t.grad_protos.as_slice(), &gp))
}

fn dist_err(protos: &Matrix) -> f64 {
    let (_, g) = distributing_reg(protos);
    let n = fd_vec(protos.as_slice(), |x| distributing_reg(&Matrix::from_vec(protos.rows(), protos.cols(), x.to_vec())).0);
    max_rel_err(g.as_slice(), &n)
}

fn full_err(inst: &GradInstance, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xabcd);
    let config = TrainConfig {
        dim: inst.model.user_emb.cols(),
        user_protos: inst.model.user_protos.rows(),
        item_protos: inst.model.item_protos.rows(),
        k_user: Some(inst.model.k_user),
        k_item: Some(inst.model.k_item),
        enable_user_filtering: inst.filtering.user,
        enable_item_filtering: inst.filtering.item,
        lambda_proto_to_user: r.gen_range(0.1..1.0),
        lambda_user_to_proto: r.gen_range(0.1..1.0),
        lambda_proto_to_item: r.gen_range(0.1..1.0),
        lambda_item_to_proto: r.gen_range(0.1..1.0),
        lambda_dist_user: r.gen_range(0.1..1.0),
        lambda_dist_item: r.gen_range(0.1..1.0),
        lambda_zerosum: r.gen_range(0.1..1.0),
        model_kind: inst.model.kind,
        ..Default::default()
    };
    let negs = BatchNegatives { items: inst.item_negatives.clone(), users: inst.user_negatives.clone() };
    let mut g = Gradients::zeros_like(&inst.model);
    batch_loss(&inst.model, &config, &inst.batch, &negs, &mut g);
    model_err(&inst.model, &g, |m| {
        let mut scratch = Gradients::zeros_like(m);
        batch_loss(m, &config, &inst.batch, &negs, &mut scratch).total
    })
}

/// Max relative error per component over `n` random instances.
pub fn gradient_suite(n: u64, kind: ModelKind) -> Vec<(&'static str, f64)> {
    let mut worst = [0.0f64; COMPONENTS.len()];
    for seed in 0..n {
        let inst = grad_instance(seed, kind);
        let m = &inst.model;
        let errs = [
            side_err(&inst, rec_loss_user, false),
            side_err(&inst, rec_loss_item, true),
            side_err(&inst, zerosum_loss_user, false),
            side_err(&inst, zerosum_loss_item, true),
            collab_err(&m.user_emb, &m.user_protos, true),
            collab_err(&m.user_emb, &m.user_protos, false),
            collab_err(&m.item_emb, &m.item_protos, true),
            collab_err(&m.item_emb, &m.item_protos, false),
            dist_err(&m.user_protos),
            dist_err(&m.item_protos),
            full_err(&inst, seed),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    COMPONENTS.iter().copied().zip(worst).collect()
}

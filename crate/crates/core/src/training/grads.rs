use crate::matrix::Matrix;
use crate::model::PrototypeModel;

/// Gradient buffers shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub user_emb: Matrix,
    pub item_emb: Matrix,
    pub user_protos: Matrix,
    pub item_protos: Matrix,
    pub user_proj: Matrix,
    pub item_proj: Matrix,
}

impl Gradients {
    pub fn zeros_like(model: &PrototypeModel) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Gradients {
            user_emb: z(&model.user_emb),
            item_emb: z(&model.item_emb),
            user_protos: z(&model.user_protos),
            item_protos: z(&model.item_protos),
            user_proj: z(&model.user_proj),
            item_proj: z(&model.item_proj),
        }
    }

    /// Same order as [`PrototypeModel::params`].
    pub fn parts(&self) -> [&Matrix; 6] {
        [&self.user_emb, &self.item_emb, &self.user_protos, &self.item_protos, &self.user_proj, &self.item_proj]
    }

    pub fn parts_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.user_emb,
            &mut self.item_emb,
            &mut self.user_protos,
            &mut self.item_protos,
            &mut self.user_proj,
            &mut self.item_proj,
        ]
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            crate::matrix::axpy(scale, b.as_slice(), a.as_mut_slice());
        }
    }

    pub fn clear(&mut self) {
        for m in self.parts_mut() {
            m.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|m| m.is_finite())
    }
}

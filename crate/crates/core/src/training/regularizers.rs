//! Prototype regularizers: the two collaborative terms that pull prototypes
//! and entities together, and the distributing term that pushes prototypes
//! towards mutual orthogonality.

use super::TrainError;
use crate::matrix::{dot, Matrix};
use crate::model::{normalize_rows, Normalized};

#[derive(Debug, Clone, PartialEq)]
pub struct RegTerm {
    pub value: f64,
    pub grad_entities: Matrix,
    pub grad_protos: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollabReg {
    /// `-(1/L) sum_l max_n sim(e_n, p_l)`: every prototype near some entity.
    pub proto_to_entity: RegTerm,
    /// `-(1/N) sum_n max_l sim(e_n, p_l)`: every entity near some prototype.
    pub entity_to_proto: RegTerm,
}

fn argmax_first(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// Both collaborative regularizers. Only the maximizing pair of each max
/// receives gradient; ties go to the lower index.
pub fn proto_collab_reg(entities: &Matrix, protos: &Matrix) -> Result<CollabReg, TrainError> {
    if entities.rows() == 0 || protos.rows() == 0 {
        return Err(TrainError::Shape("collaborative regularizer needs at least one entity and one prototype".into()));
    }
    if entities.cols() != protos.cols() {
        return Err(TrainError::Shape(format!("entity dim {} vs prototype dim {}", entities.cols(), protos.cols())));
    }
    let (n, l) = (entities.rows(), protos.rows());
    let e_n = normalize_rows(entities);
    let p_n = normalize_rows(protos);
    // cos[a][b] between entity a and prototype b
    let cos: Vec<Vec<f64>> = e_n.iter().map(|e| p_n.iter().map(|p| dot(&e.unit, &p.unit)).collect()).collect();

    let mut pe = RegTerm { value: 0.0, grad_entities: Matrix::zeros(n, entities.cols()), grad_protos: Matrix::zeros(l, protos.cols()) };
    let mut ep = pe.clone();
    let add_pair = |term: &mut RegTerm, a: usize, b: usize, scale: f64, e: &Normalized, p: &Normalized| {
        let c = cos[a][b];
        e.add_cos_grad(&p.unit, c, scale, term.grad_entities.row_mut(a));
        p.add_cos_grad(&e.unit, c, scale, term.grad_protos.row_mut(b));
    };

    for b in 0..l {
        let (a, c) = argmax_first((0..n).map(|a| cos[a][b]));
        pe.value -= (1.0 + c) / l as f64;
        add_pair(&mut pe, a, b, -1.0 / l as f64, &e_n[a], &p_n[b]);
    }
    for a in 0..n {
        let (b, c) = argmax_first(cos[a].iter().copied());
        ep.value -= (1.0 + c) / n as f64;
        add_pair(&mut ep, a, b, -1.0 / n as f64, &e_n[a], &p_n[b]);
    }
    Ok(CollabReg { proto_to_entity: pe, entity_to_proto: ep })
}

/// Frobenius norm of the cosine Gram matrix of the prototypes, diagonal
/// included, with its gradient. At least `sqrt(L)`, with equality exactly
/// when the rows are mutually orthogonal.
pub fn distributing_reg(protos: &Matrix) -> (f64, Matrix) {
    let l = protos.rows();
    let p_n = normalize_rows(protos);
    let gram: Vec<Vec<f64>> = p_n.iter().map(|a| p_n.iter().map(|b| dot(&a.unit, &b.unit)).collect()).collect();
    let value = gram.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();

    let mut grad = Matrix::zeros(l, protos.cols());
    if value == 0.0 {
        return (value, grad);
    }
    let mut g_unit = vec![0.0; protos.cols()];
    for a in 0..l {
        g_unit.iter_mut().for_each(|x| *x = 0.0);
        for b in 0..l {
            crate::matrix::axpy(2.0 * gram[a][b] / value, &p_n[b].unit, &mut g_unit);
        }
        p_n[a].add_unit_grad(&g_unit, grad.row_mut(a));
    }
    (value, grad)
}

/// Mean absolute cosine over distinct prototype pairs; 0 for a single prototype.
pub fn mean_pairwise_abs_cosine(protos: &Matrix) -> f64 {
    let p_n = normalize_rows(protos);
    let l = p_n.len();
    if l < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..l {
        for b in a + 1..l {
            total += dot(&p_n[a].unit, &p_n[b].unit).abs();
        }
    }
    total / (l * (l - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coinciding_prototypes_give_minus_two() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]);
        let p = Matrix::from_rows(&[vec![0.0, 3.0], vec![2.0, 0.0]]);
        let r = proto_collab_reg(&e, &p).unwrap();
        assert!((r.proto_to_entity.value + 2.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_single_pair() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let p = Matrix::from_rows(&[vec![0.0, 1.0]]);
        let r = proto_collab_reg(&e, &p).unwrap();
        assert_eq!(r.proto_to_entity.value, -1.0);
        assert_eq!(r.entity_to_proto.value, -1.0);
        assert!(proto_collab_reg(&Matrix::zeros(0, 2), &p).is_err());
    }

    #[test]
    fn distributing_extremes() {
        let eye = Matrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 0.5, 0.0], vec![0.0, 0.0, 1.0]]);
        let (v, g) = distributing_reg(&eye);
        assert!((v - 3f64.sqrt()).abs() < 1e-15);
        assert!(g.as_slice().iter().all(|x| x.abs() < 1e-15), "orthogonal rows are a stationary point");

        let dup = Matrix::from_rows(&[vec![0.3, 0.4], vec![0.3, 0.4]]);
        assert!((distributing_reg(&dup).0 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_cosine_proxy() {
        let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(mean_pairwise_abs_cosine(&eye), 0.0);
        let anti = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(mean_pairwise_abs_cosine(&anti), 1.0);
    }
}

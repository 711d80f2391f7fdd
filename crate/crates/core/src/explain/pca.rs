use nalgebra::{DMatrix, SymmetricEigen};

use super::ExplainError;
use crate::matrix::Matrix;

/// Result of a two-component PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// The two principal axes.
    pub axes: [Vec<f64>; 2],
}

/// Projects mean-centred rows onto the top two eigenvectors of their
/// covariance (normalized by the row count). Each axis is signed so that its
/// largest-magnitude entry is positive.
pub fn pca_2d(x: &Matrix) -> Result<Projection, ExplainError> {
    let (n, d) = (x.rows(), x.cols());
    if d < 2 {
        return Err(ExplainError::DimensionTooSmall(d));
    }
    if n == 0 {
        return Err(ExplainError::Empty);
    }
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let centred = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = (0..d).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        v
    };
    let axes = [axis(0), axis(1)];
    let coords = (0..n)
        .map(|i| {
            let row = centred.row(i);
            let p = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect();
    Ok(Projection { coords, eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(), axes })
}

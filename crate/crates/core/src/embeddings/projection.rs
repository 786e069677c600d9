use nalgebra::{DMatrix, SymmetricEigen};

use super::{EmbeddingError, Matrix};

/// Mean-centered PCA projection onto the top `r` principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub mean: Vec<f64>,
    /// `r x p`, orthonormal rows.
    pub components: Matrix,
    /// Sample variance (N-1 denominator) along each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl ProjectionModel {
    pub fn r(&self) -> usize {
        self.components.rows()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix, EmbeddingError> {
        if x.cols() != self.mean.len() {
            return Err(EmbeddingError::DimensionMismatch { expected: self.mean.len(), found: x.cols() });
        }
        let r = self.r();
        let mut out = Matrix::zeros(x.rows(), r);
        let mut centered = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&self.mean) {
                *c = v - m;
            }
            let dst = out.row_mut(i);
            for (k, d) in dst.iter_mut().enumerate() {
                *d = super::dot(&centered, self.components.row(k));
            }
        }
        Ok(out)
    }
}

/// Fit PCA by eigendecomposition of the sample covariance.
///
/// Each component's largest-magnitude entry is made positive so repeated
/// fits on the same data give identical signs.
pub fn fit_projection(x: &Matrix, r: usize) -> Result<ProjectionModel, EmbeddingError> {
    let (n, p) = (x.rows(), x.cols());
    if n < 2 {
        return Err(EmbeddingError::TooFewRows(n));
    }
    if r == 0 || r > n.min(p) {
        return Err(EmbeddingError::InvalidRank { r, n, p });
    }
    let mean: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x.row(i)[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| x.row(i)[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Matrix::zeros(r, p);
    let mut explained_variance = Vec::with_capacity(r);
    for (k, &col) in order.iter().take(r).enumerate() {
        let v = eig.eigenvectors.column(col);
        let pivot = (0..p).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (j, dst) in components.row_mut(k).iter_mut().enumerate() {
            *dst = sign * v[j];
        }
        explained_variance.push(eig.eigenvalues[col].max(0.0));
    }
    Ok(ProjectionModel { mean, components, explained_variance })
}

//! Conversions between runtime tensors and f64 linear algebra types.

use nalgebra::{DMatrix, DVector};
use rocr_model::Tensor;

/// Copy an f32 weight matrix into an f64 dense matrix.
pub fn tensor_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_iterator(t.rows(), t.cols(), t.data().iter().map(|&v| v as f64))
}

pub fn vec_to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Largest and second-largest singular values of a matrix.
pub fn top_two_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let mut svs: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    svs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let s1 = svs.first().copied().unwrap_or(0.0);
    let s2 = svs.get(1).copied().unwrap_or(0.0);
    (s1, s2)
}

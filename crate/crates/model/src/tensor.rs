//! Dense little tensors: 1-D or 2-D, row-major, f32 storage.
//!
//! Weights stay in 32-bit storage; all arithmetic that consumes them
//! upcasts to f64 at the point of use.

use crate::error::{ModelError, Result};

/// A named-shape f32 array, either a vector or a row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(ModelError::Dimension(format!(
                "tensors must be 1-D or 2-D, got {} dims",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(ModelError::Dimension(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 { self.shape[1] } else { 1 }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Row `i` of a 2-D tensor (or the whole buffer of a 1-D tensor when i = 0).
    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// First flat index holding a non-finite value, if any.
    pub fn non_finite_index(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// y = A x with f64 accumulation; A is rows x cols, x has len cols.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.cols(), x.len());
        let c = self.cols();
        (0..self.rows())
            .map(|i| {
                let row = &self.data[i * c..(i + 1) * c];
                row.iter().zip(x).map(|(&w, &xv)| w as f64 * xv).sum()
            })
            .collect()
    }

    /// y = Aᵀ x with f64 accumulation; x has len rows, result has len cols.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.rows(), x.len());
        let c = self.cols();
        let mut out = vec![0.0f64; c];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.data[i * c..(i + 1) * c];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w as f64 * xi;
            }
        }
        out
    }

    /// Frobenius norm in f64.
    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

//! Null-space projector over preserved keys.
//!
//! Eigendecompose the preserved-key second moment and keep the
//! eigenvectors whose eigenvalues fall at or below a relative threshold of
//! the largest; their outer product is the symmetric idempotent projector
//! onto directions the edit may use without disturbing preserved mappings.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::covariance::CovarianceStats;
use crate::error::{EditError, Result};

/// Relative eigenvalue cutoff used when none is configured.
pub const DEFAULT_REL_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct NullProjector {
    pub layer: usize,
    matrix: DMatrix<f64>,
    pub rel_threshold: f64,
    pub null_dim: usize,
    pub source_n_keys: usize,
}

impl NullProjector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Identity projector: nothing is preserved, every direction is free.
    pub fn identity(layer: usize, d: usize, rel_threshold: f64) -> Self {
        NullProjector {
            layer,
            matrix: DMatrix::identity(d, d),
            rel_threshold,
            null_dim: d,
            source_n_keys: 0,
        }
    }
}

/// Build the projector from covariance statistics. A zero covariance
/// yields the exact identity.
pub fn spectral_null_projector(
    cov: &CovarianceStats,
    rel_threshold: f64,
) -> Result<NullProjector> {
    if !(0.0..1.0).contains(&rel_threshold) {
        return Err(EditError::Config(format!(
            "relative threshold must be in [0, 1), got {rel_threshold}"
        )));
    }
    let d = cov.d_mlp();
    let sym_defect = cov.symmetry_defect();
    let scale = cov.second_moment().norm();
    if sym_defect > 1e-12 * scale.max(1.0) {
        return Err(EditError::Numeric(format!(
            "second moment is not symmetric (defect {sym_defect:.3e})"
        )));
    }
    if scale == 0.0 {
        return Ok(NullProjector::identity(cov.layer, d, rel_threshold));
    }

    let eig = SymmetricEigen::new(cov.second_moment().clone());
    let max_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !max_eig.is_finite() || !min_eig.is_finite() {
        return Err(EditError::Numeric("eigendecomposition produced non-finite values".into()));
    }
    if min_eig < -1e-9 * max_eig.max(0.0) {
        return Err(EditError::Numeric(format!(
            "second moment is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }

    let cutoff = rel_threshold * max_eig;
    let null_cols: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] <= cutoff)
        .collect();
    let null_dim = null_cols.len();
    let mut p = DMatrix::zeros(d, d);
    for &c in &null_cols {
        let u = eig.eigenvectors.column(c);
        // p += u uᵀ
        for i in 0..d {
            for j in 0..d {
                p[(i, j)] += u[i] * u[j];
            }
        }
    }
    // Exact symmetry regardless of accumulation order.
    let p = (&p + p.transpose()) * 0.5;

    Ok(NullProjector {
        layer: cov.layer,
        matrix: p,
        rel_threshold,
        null_dim,
        source_n_keys: cov.n_keys,
    })
}

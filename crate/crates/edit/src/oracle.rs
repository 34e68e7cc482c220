//! Reference solver for the projected update objective.
//!
//! Minimizes ||(W + D P) k_f - v_r||^2 + alpha ||D P||^2 by solving the
//! dense normal equations row by row through an eigenvalue pseudo-inverse,
//! then projecting the solution. This route shares no code with the
//! closed-form rank-one solve and exists to check it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EditError, Result};

/// Minimize the projected objective with unit ridge weight.
pub fn oracle_minimize(
    w: &DMatrix<f64>,
    k_f: &DVector<f64>,
    v_r: &DVector<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    oracle_minimize_weighted(w, k_f, v_r, p, 1.0)
}

pub fn oracle_minimize_weighted(
    w: &DMatrix<f64>,
    k_f: &DVector<f64>,
    v_r: &DVector<f64>,
    p: &DMatrix<f64>,
    ridge_weight: f64,
) -> Result<DMatrix<f64>> {
    let d_mlp = k_f.len();
    let d_model = v_r.len();
    if w.nrows() != d_model || w.ncols() != d_mlp || p.nrows() != d_mlp || p.ncols() != d_mlp {
        return Err(EditError::Shape("oracle operand shapes disagree".into()));
    }

    // Stationarity of the objective in D gives, independently per row i:
    //   (P k kᵀ P + alpha P) d_i = R_i P k.
    let r = v_r - w * k_f;
    let pk = p * k_f;
    let m = &pk * pk.transpose() + p * ridge_weight;

    // Minimum-norm row solution via spectral pseudo-inverse of M.
    let eig = SymmetricEigen::new(m.clone());
    let max_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = DVector::zeros(d_mlp);
    if max_eig > 0.0 {
        let tol = 1e-12 * max_eig;
        for c in 0..d_mlp {
            let lambda = eig.eigenvalues[c];
            if lambda > tol {
                let u = eig.eigenvectors.column(c);
                let coeff = u.dot(&pk) / lambda;
                z += u * coeff;
            }
        }
        // Convergence check: the normal equations must actually hold.
        let resid = (&m * &z - &pk).norm();
        if resid > 1e-8 * pk.norm().max(1e-12) {
            return Err(EditError::Oracle(format!(
                "normal-equation residual {resid:.3e} exceeds tolerance"
            )));
        }
    }

    // D~ = R zᵀ, then project.
    let d_tilde = &r * z.transpose();
    Ok(&d_tilde * p)
}

//! The rank-one down-projection update and its closed-form solve.
//!
//! Target: remap the forget key `k_f` to the redirection vector `v_r`
//! while keeping every preserved mapping fixed. With residual
//! `R = v_r - W k_f` and projector `P`, the minimizer of
//!
//! ```text
//! || (W + D P) k_f - v_r ||^2  +  alpha * || D P ||^2
//! ```
//!
//! over unconstrained D is the rank-one matrix
//!
//! ```text
//! Delta = R k_fᵀ P (k_f k_fᵀ P + alpha I)^{-1}
//! ```
//!
//! whose rows already lie in the range of P (so Delta P = Delta and
//! Delta K0 vanishes with P K0). The inverse always exists: the bracket's
//! spectrum is {alpha, alpha + ||P k_f||^2}.

use nalgebra::{DMatrix, DVector};

use rocr_model::ModelBundle;

use crate::covariance::CovarianceStats;
use crate::error::{EditError, Result};
use crate::linalg::top_two_singular_values;
use crate::probe::ConceptStats;
use crate::projector::NullProjector;

/// Relative size of `P k_f` below which the edit is reported as having no
/// effect and the update is forced to exactly zero.
pub const NO_EFFECT_REL_NORM: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct RankOneUpdate {
    pub layer: usize,
    /// d_model x d_mlp correction to the down-projection.
    pub delta: DMatrix<f64>,
    /// Desired output change R = v_r - W k_f.
    pub residual: DVector<f64>,
    pub key: DVector<f64>,
    /// Projected objective value at Delta = 0 and at the solution.
    pub objective_before: f64,
    pub objective_after: f64,
    /// True when the forget key lies entirely in the preserved span.
    pub no_effect: bool,
}

impl RankOneUpdate {
    pub fn delta_frobenius(&self) -> f64 {
        self.delta.norm()
    }

    /// sigma_2 / sigma_1 of the update; zero for the zero matrix.
    pub fn rank_ratio(&self) -> f64 {
        let (s1, s2) = top_two_singular_values(&self.delta);
        if s1 == 0.0 { 0.0 } else { s2 / s1 }
    }
}

/// v_r = v_f + (h_t - h_f): move the MLP output so the hidden state lands
/// on the target concept representation.
pub fn redirection_vector(forget: &ConceptStats, target_h: &DVector<f64>) -> Result<DVector<f64>> {
    let v_f = forget
        .v
        .as_ref()
        .ok_or_else(|| EditError::Shape("forget stats carry no MLP output v".into()))?;
    if target_h.len() != forget.h.len() || v_f.len() != forget.h.len() {
        return Err(EditError::Shape(format!(
            "width mismatch: v_f {}, h_f {}, h_t {}",
            v_f.len(),
            forget.h.len(),
            target_h.len()
        )));
    }
    Ok(v_f + (target_h - &forget.h))
}

/// Diagnostic objective: forget-fit plus preserved-drift, the latter in
/// trace form over the key second moment. Because the pre-edit weights
/// already reproduce the preserved outputs, the drift term is
/// trace((Ŵ−W) cov (Ŵ−W)ᵀ).
pub fn objective_value(
    w: &DMatrix<f64>,
    candidate: &DMatrix<f64>,
    k_f: &DVector<f64>,
    v_r: &DVector<f64>,
    cov: &CovarianceStats,
) -> Result<f64> {
    if w.shape() != candidate.shape() {
        return Err(EditError::Shape(format!(
            "candidate shape {:?} differs from W {:?}",
            candidate.shape(),
            w.shape()
        )));
    }
    if w.ncols() != k_f.len() || w.nrows() != v_r.len() || cov.d_mlp() != k_f.len() {
        return Err(EditError::Shape("objective operand widths disagree".into()));
    }
    let fit = (candidate * k_f - v_r).norm_squared();
    let d = candidate - w;
    let drift = (&d * cov.second_moment() * d.transpose()).trace();
    Ok(fit + drift)
}

/// Closed-form rank-one update with unit ridge weight.
pub fn closed_form_update(
    w: &DMatrix<f64>,
    k_f: &DVector<f64>,
    v_r: &DVector<f64>,
    projector: &NullProjector,
) -> Result<RankOneUpdate> {
    closed_form_update_weighted(w, k_f, v_r, projector, 1.0)
}

/// Closed-form rank-one update; `ridge_weight` scales the update-norm
/// penalty (the printed objective uses weight 1).
pub fn closed_form_update_weighted(
    w: &DMatrix<f64>,
    k_f: &DVector<f64>,
    v_r: &DVector<f64>,
    projector: &NullProjector,
    ridge_weight: f64,
) -> Result<RankOneUpdate> {
    let d_mlp = k_f.len();
    let d_model = v_r.len();
    if w.nrows() != d_model || w.ncols() != d_mlp {
        return Err(EditError::Shape(format!(
            "W is {:?}, expected ({d_model}, {d_mlp})",
            w.shape()
        )));
    }
    if projector.dim() != d_mlp {
        return Err(EditError::Shape(format!(
            "projector dim {} does not match d_mlp {d_mlp}",
            projector.dim()
        )));
    }
    if !ridge_weight.is_finite() || ridge_weight <= 0.0 {
        return Err(EditError::Config(format!(
            "ridge weight must be positive, got {ridge_weight}"
        )));
    }
    let key_norm = k_f.norm();
    if key_norm == 0.0 {
        return Err(EditError::Numeric("forget key has zero norm".into()));
    }

    let p = projector.matrix();
    let pk = p * k_f;
    let objective_before = (w * k_f - v_r).norm_squared();
    let residual = v_r - w * k_f;

    if pk.norm() <= NO_EFFECT_REL_NORM * key_norm {
        return Ok(RankOneUpdate {
            layer: projector.layer,
            delta: DMatrix::zeros(d_model, d_mlp),
            residual,
            key: k_f.clone(),
            objective_before,
            objective_after: objective_before,
            no_effect: true,
        });
    }

    // Solve (k_f k_fᵀ P + aI)ᵀ y = P k_f, then Delta = R yᵀ.
    let mut a_t = &pk * k_f.transpose();
    for i in 0..d_mlp {
        a_t[(i, i)] += ridge_weight;
    }
    let y = a_t
        .lu()
        .solve(&pk)
        .ok_or_else(|| EditError::Numeric(
            "rank-one system was singular; this system is invertible by construction".into(),
        ))?;
    let delta = &residual * y.transpose();

    // Objective at the solution, evaluated exactly as written: the
    // candidate enters through Delta P.
    let dp = &delta * p;
    let objective_after = ((w + &dp) * k_f - v_r).norm_squared() + dp.norm_squared();

    Ok(RankOneUpdate {
        layer: projector.layer,
        delta,
        residual,
        key: k_f.clone(),
        objective_before,
        objective_after,
        no_effect: false,
    })
}

/// Outcome of applying an update to the model.
#[derive(Debug, Clone)]
pub struct AppliedEdit {
    pub layer: usize,
    pub tensor_name: String,
    pub delta_fnorm: f64,
    pub rank_ratio: f64,
    pub no_effect: bool,
    pub wall_ms: f64,
}

/// Add the update to the layer's down-projection in place.
pub fn apply_update(bundle: &mut ModelBundle, update: &RankOneUpdate) -> Result<AppliedEdit> {
    let start = std::time::Instant::now();
    if update.layer >= bundle.config.n_layers {
        return Err(EditError::Layer {
            layer: update.layer,
            max: bundle.config.n_layers,
        });
    }
    let name = bundle.config.down_proj_name(update.layer);
    let (d_model, d_mlp) = (bundle.config.d_model, bundle.config.d_mlp);
    if update.delta.shape() != (d_model, d_mlp) {
        return Err(EditError::Shape(format!(
            "delta shape {:?} does not match down-projection ({d_model}, {d_mlp})",
            update.delta.shape()
        )));
    }
    if update.delta.iter().any(|v| !v.is_finite()) {
        return Err(EditError::Numeric("update contains non-finite entries".into()));
    }
    let rank_ratio = update.rank_ratio();
    let delta_fnorm = update.delta_frobenius();
    {
        let tensor = bundle.tensor_mut(&name)?;
        let data = tensor.data_mut();
        for i in 0..d_model {
            for j in 0..d_mlp {
                let idx = i * d_mlp + j;
                data[idx] = (data[idx] as f64 + update.delta[(i, j)]) as f32;
            }
        }
    }
    Ok(AppliedEdit {
        layer: update.layer,
        tensor_name: name,
        delta_fnorm,
        rank_ratio,
        no_effect: update.no_effect,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

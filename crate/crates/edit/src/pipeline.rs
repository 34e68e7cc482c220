//! Multi-layer edit orchestration.
//!
//! Edits run in ascending layer order. By default the forget and target
//! statistics are re-collected from the partially edited model before each
//! layer's update, since editing a layer changes the inputs of the layers
//! above it; `reprobe: false` collects all statistics once from the
//! pristine model instead.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use rocr_model::ModelBundle;

use crate::covariance::CovarianceFile;
use crate::error::{EditError, Result};
use crate::linalg::tensor_matrix;
use crate::probe::{collect_activation_key, collect_hidden_target, ConceptStats, ProbeTemplateSet};
use crate::projector::{spectral_null_projector, NullProjector};
use crate::update::{apply_update, closed_form_update_weighted};
use crate::variants::{noise_target, reject_target, RejectOptConfig};

/// How the redirection target representation is produced.
#[derive(Debug, Clone)]
pub enum Variant {
    /// Redirect to another concept's own representation.
    Semantic { target_word: String },
    /// Redirect to norm-matched Gaussian noise.
    Noise,
    /// Redirect to an optimized rejection direction.
    Reject(RejectOptConfig),
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Semantic { .. } => "semantic",
            Variant::Noise => "noise",
            Variant::Reject(_) => "reject",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditOptions {
    pub forget_word: String,
    pub variant: Variant,
    pub layers: Vec<usize>,
    pub templates: ProbeTemplateSet,
    /// Relative eigenvalue threshold for the null projectors.
    pub threshold: f64,
    /// Weight on the update-norm penalty; 1 is the solved objective.
    pub ridge_weight: f64,
    pub seed: u64,
    pub reprobe: bool,
    /// Apply the model's prompt template during probing.
    pub use_template: bool,
}

/// One layer's entry in the receipt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEditRecord {
    pub layer: usize,
    pub delta_fnorm: f64,
    pub rank_ratio: f64,
    pub null_dim: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub no_effect: bool,
    pub wall_ms: f64,
}

/// Persistent record of an applied edit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditReceipt {
    pub schema: String,
    pub forget_word: String,
    pub variant: String,
    pub target_word: Option<String>,
    pub layers: Vec<LayerEditRecord>,
    pub covariance_digests: BTreeMap<usize, String>,
    pub threshold: f64,
    pub ridge_weight: f64,
    pub seed: u64,
    pub reprobe: bool,
    pub model_digest_before: String,
    pub model_digest_after: String,
    pub total_wall_ms: f64,
}

pub const RECEIPT_SCHEMA: &str = "rocr.receipt.v1";

impl EditReceipt {
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap()).map_err(|e| {
            EditError::Io {
                path: path.display().to_string(),
                source: e,
            }
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EditError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| EditError::Format(format!("receipt: {e}")))
    }
}

/// Build per-layer projectors from covariance files at the given threshold.
pub fn projectors_from_files(
    files: &BTreeMap<usize, CovarianceFile>,
    threshold: f64,
) -> Result<BTreeMap<usize, NullProjector>> {
    files
        .iter()
        .map(|(&layer, file)| {
            if file.stats.layer != layer {
                return Err(EditError::Config(format!(
                    "covariance file for layer {layer} was built at layer {}",
                    file.stats.layer
                )));
            }
            Ok((layer, spectral_null_projector(&file.stats, threshold)?))
        })
        .collect()
}

fn validate(bundle: &ModelBundle, opts: &EditOptions) -> Result<()> {
    if opts.layers.is_empty() {
        return Err(EditError::Config("layer list is empty".into()));
    }
    for &l in &opts.layers {
        if l >= bundle.config.n_layers {
            return Err(EditError::Layer {
                layer: l,
                max: bundle.config.n_layers,
            });
        }
    }
    let mut sorted = opts.layers.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != opts.layers.len() {
        return Err(EditError::Config("layer list contains duplicates".into()));
    }
    if let Variant::Semantic { target_word } = &opts.variant {
        if target_word.is_empty() {
            return Err(EditError::Config("semantic variant requires a target word".into()));
        }
    }
    Ok(())
}

fn target_hidden(
    bundle: &ModelBundle,
    opts: &EditOptions,
    forget: &ConceptStats,
    layer: usize,
) -> Result<DVector<f64>> {
    match &opts.variant {
        Variant::Semantic { target_word } => Ok(collect_hidden_target(
            bundle,
            &opts.templates,
            target_word,
            layer,
            opts.use_template,
        )?
        .h),
        Variant::Noise => noise_target(&forget.h, opts.seed.wrapping_add(layer as u64)),
        Variant::Reject(cfg) => reject_target(bundle, forget, cfg, opts.use_template),
    }
}

/// Probe, solve, and apply one rank-one update per requested layer.
/// Projectors must cover every layer in the plan.
pub fn run_edit(
    bundle: &mut ModelBundle,
    opts: &EditOptions,
    projectors: &BTreeMap<usize, NullProjector>,
    covariance_digests: &BTreeMap<usize, String>,
) -> Result<EditReceipt> {
    let started = std::time::Instant::now();
    validate(bundle, opts)?;
    let mut layers = opts.layers.clone();
    layers.sort_unstable();
    for &l in &layers {
        if !projectors.contains_key(&l) {
            return Err(EditError::Config(format!(
                "no covariance statistics supplied for layer {l}"
            )));
        }
    }
    let model_digest_before = bundle.digest();

    // Without reprobing, all statistics come from the pristine model.
    let mut preprobed: BTreeMap<usize, (ConceptStats, DVector<f64>)> = BTreeMap::new();
    if !opts.reprobe {
        for &layer in &layers {
            let forget = collect_activation_key(
                bundle,
                &opts.templates,
                &opts.forget_word,
                layer,
                opts.use_template,
            )?;
            let h_t = target_hidden(bundle, opts, &forget, layer)?;
            preprobed.insert(layer, (forget, h_t));
        }
    }

    let mut records = Vec::with_capacity(layers.len());
    for &layer in &layers {
        let layer_start = std::time::Instant::now();
        let (forget, h_t) = match preprobed.remove(&layer) {
            Some(pair) => pair,
            None => {
                let forget = collect_activation_key(
                    bundle,
                    &opts.templates,
                    &opts.forget_word,
                    layer,
                    opts.use_template,
                )?;
                let h_t = target_hidden(bundle, opts, &forget, layer)?;
                (forget, h_t)
            }
        };
        let v_r = crate::update::redirection_vector(&forget, &h_t)?;
        let k_f = forget.k.as_ref().expect("forget probe populates k");
        let projector = &projectors[&layer];
        let w = tensor_matrix(bundle.tensor(&bundle.config.down_proj_name(layer))?);
        let update =
            closed_form_update_weighted(&w, k_f, &v_r, projector, opts.ridge_weight)?;
        let applied = apply_update(bundle, &update)?;
        records.push(LayerEditRecord {
            layer,
            delta_fnorm: applied.delta_fnorm,
            rank_ratio: applied.rank_ratio,
            null_dim: projector.null_dim,
            objective_before: update.objective_before,
            objective_after: update.objective_after,
            no_effect: update.no_effect,
            wall_ms: layer_start.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(EditReceipt {
        schema: RECEIPT_SCHEMA.to_string(),
        forget_word: opts.forget_word.clone(),
        variant: opts.variant.name().to_string(),
        target_word: match &opts.variant {
            Variant::Semantic { target_word } => Some(target_word.clone()),
            _ => None,
        },
        layers: records,
        covariance_digests: layers
            .iter()
            .filter_map(|l| covariance_digests.get(l).map(|d| (*l, d.clone())))
            .collect(),
        threshold: opts.threshold,
        ridge_weight: opts.ridge_weight,
        seed: opts.seed,
        reprobe: opts.reprobe,
        model_digest_before,
        model_digest_after: bundle.digest(),
        total_wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

//! Edit configuration resolution: defaults, then config file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use rocr_edit::pipeline::projectors_from_files;
use rocr_edit::{
    read_covariance, CovarianceFile, EditOptions, NullProjector, ProbeTemplateSet,
    RejectOptConfig, Variant, DEFAULT_REL_THRESHOLD,
};

use crate::args::EditFlags;
use crate::error::{CliError, Result};

/// Layers edited when nothing else is configured.
pub const DEFAULT_LAYERS: [usize; 3] = [4, 5, 6];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditConfigFile {
    pub forget_word: Option<String>,
    pub variant: Option<String>,
    pub target_word: Option<String>,
    pub layers: Option<Vec<usize>>,
    pub templates: Option<PathBuf>,
    pub covariance_dir: Option<PathBuf>,
    /// Explicit per-layer covariance paths; keys are layer indices.
    pub covariance: Option<BTreeMap<String, PathBuf>>,
    pub threshold: Option<f64>,
    pub ridge_weight: Option<f64>,
    pub seed: Option<u64>,
    pub reprobe: Option<bool>,
    pub use_template: Option<bool>,
    pub reject: Option<RejectSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectSection {
    pub reject_text: Option<String>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub prompts_file: Option<PathBuf>,
    pub prompts: Option<Vec<String>>,
}

pub struct ResolvedEdit {
    pub opts: EditOptions,
    pub projectors: BTreeMap<usize, NullProjector>,
    pub covariance_digests: BTreeMap<usize, String>,
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_config(flags: &EditFlags) -> Result<EditConfigFile> {
    match &flags.config {
        None => Ok(EditConfigFile::default()),
        Some(path) => {
            let text = read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Eval(rocr_eval::EvalError::Format(format!(
                    "edit config {}: {e}",
                    path.display()
                )))
            })
        }
    }
}

fn covariance_path_for(
    layer: usize,
    flags: &EditFlags,
    cfg: &EditConfigFile,
) -> Result<PathBuf> {
    if let Some(map) = &cfg.covariance {
        if let Some(p) = map.get(&layer.to_string()) {
            return Ok(p.clone());
        }
    }
    let dir = flags
        .cov_dir
        .clone()
        .or_else(|| cfg.covariance_dir.clone())
        .ok_or_else(|| {
            CliError::Usage(format!(
                "no covariance statistics configured for layer {layer}; pass --cov-dir or list it in the config file"
            ))
        })?;
    Ok(dir.join(format!("layer_{layer}.cov")))
}

/// Load the covariance file for one layer. Missing files surface as io
/// errors (exit 2).
pub fn load_covariance(path: &Path) -> Result<CovarianceFile> {
    read_covariance(path).map_err(CliError::Edit)
}

fn resolve_reject(flags: &EditFlags, cfg: &EditConfigFile) -> Result<RejectOptConfig> {
    let section = cfg.reject.as_ref();
    let mut out = RejectOptConfig::default();
    if let Some(text) = section.and_then(|s| s.reject_text.clone()) {
        out.reject_text = text;
    }
    if let Some(text) = flags.reject_text.clone() {
        out.reject_text = text;
    }
    if let Some(steps) = section.and_then(|s| s.steps) {
        out.steps = steps;
    }
    if let Some(steps) = flags.reject_steps {
        out.steps = steps;
    }
    if let Some(lr) = section.and_then(|s| s.lr) {
        out.lr = lr;
    }
    if let Some(lr) = flags.reject_lr {
        out.lr = lr;
    }
    if let Some(prompts) = section.and_then(|s| s.prompts.clone()) {
        out.prompt_set = prompts;
    }
    let prompts_file = flags
        .reject_prompts
        .clone()
        .or_else(|| section.and_then(|s| s.prompts_file.clone()));
    if let Some(path) = prompts_file {
        out.prompt_set = read_to_string(&path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
    }
    if out.prompt_set.is_empty() {
        return Err(CliError::Usage(
            "the reject variant needs prompts: pass --reject-prompts or configure reject.prompts".into(),
        ));
    }
    Ok(out)
}

/// Resolve flags + config file into runnable edit options, loading the
/// covariance statistics for every layer in the plan.
pub fn resolve(flags: &EditFlags, layers_override: Option<Vec<usize>>) -> Result<ResolvedEdit> {
    let cfg = load_config(flags)?;

    let forget_word = flags
        .forget
        .clone()
        .or_else(|| cfg.forget_word.clone())
        .ok_or_else(|| CliError::Usage("--forget is required".into()))?;

    let variant_name = flags
        .variant
        .clone()
        .or_else(|| cfg.variant.clone())
        .unwrap_or_else(|| "semantic".to_string());
    let target = flags.target.clone().or_else(|| cfg.target_word.clone());
    let variant = match variant_name.as_str() {
        "semantic" => {
            let target_word = target.ok_or_else(|| {
                CliError::Usage("the semantic variant requires --target".into())
            })?;
            Variant::Semantic { target_word }
        }
        "noise" => Variant::Noise,
        "reject" => Variant::Reject(resolve_reject(flags, &cfg)?),
        other => {
            return Err(CliError::Usage(format!(
                "unknown variant `{other}` (expected semantic, noise, or reject)"
            )))
        }
    };

    let layers = layers_override
        .or_else(|| flags.layers.clone())
        .or_else(|| cfg.layers.clone())
        .unwrap_or_else(|| DEFAULT_LAYERS.to_vec());
    if layers.is_empty() {
        return Err(CliError::Usage("layer list is empty".into()));
    }

    let templates_path = flags
        .templates
        .clone()
        .or_else(|| cfg.templates.clone())
        .ok_or_else(|| CliError::Usage("--templates is required".into()))?;
    let templates = ProbeTemplateSet::from_file(&templates_path).map_err(CliError::Edit)?;

    let threshold = flags
        .threshold
        .or(cfg.threshold)
        .unwrap_or(DEFAULT_REL_THRESHOLD);
    let ridge_weight = flags.ridge_weight.or(cfg.ridge_weight).unwrap_or(1.0);
    let seed = flags.seed.or(cfg.seed).unwrap_or(0);
    let reprobe = if flags.no_reprobe {
        false
    } else {
        cfg.reprobe.unwrap_or(true)
    };
    let use_template = if flags.no_probe_template {
        false
    } else {
        cfg.use_template.unwrap_or(true)
    };

    let mut files = BTreeMap::new();
    let mut covariance_digests = BTreeMap::new();
    for &layer in &layers {
        let path = covariance_path_for(layer, flags, &cfg)?;
        let file = load_covariance(&path)?;
        covariance_digests.insert(layer, file.corpus_digest.clone());
        files.insert(layer, file);
    }
    let projectors = projectors_from_files(&files, threshold).map_err(CliError::Edit)?;

    Ok(ResolvedEdit {
        opts: EditOptions {
            forget_word,
            variant,
            layers,
            templates,
            threshold,
            ridge_weight,
            seed,
            reprobe,
            use_template,
        },
        projectors,
        covariance_digests,
    })
}

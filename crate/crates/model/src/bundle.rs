//! A loaded model: config, named weight tensors, tokenizer, and the
//! optional prompt template.
//!
//! Model directory layout:
//!   config.json      ModelConfig fields, exact key names
//!   model.safetensors named tensors (see `ModelConfig::required_tensors`)
//!   tokenizer.json   tokenizer mode + vocab (+ merges for bpe)
//!   template.txt     optional; plain text with one `{input}` placeholder

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::ModelConfig;
use crate::digest::Fnv1a;
use crate::error::{ModelError, Result};
use crate::safetensors;
use crate::tensor::Tensor;
use crate::tokenizer::Tokenizer;

pub const CONFIG_FILE: &str = "config.json";
pub const TENSORS_FILE: &str = "model.safetensors";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const TEMPLATE_FILE: &str = "template.txt";

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
    pub tokenizer: Tokenizer,
    template: Option<String>,
}

impl ModelBundle {
    /// Assemble a bundle from parts, validating every invariant the loader
    /// would enforce.
    pub fn new(
        config: ModelConfig,
        tensors: BTreeMap<String, Tensor>,
        tokenizer: Tokenizer,
        template: Option<String>,
    ) -> Result<Self> {
        config.validate()?;
        if tokenizer.vocab_size() != config.vocab_size {
            return Err(ModelError::Config(format!(
                "tokenizer has {} ids but config declares vocab_size {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        if let Some(t) = &template {
            if t.matches("{input}").count() != 1 {
                return Err(ModelError::Config(
                    "template must contain `{input}` exactly once".into(),
                ));
            }
        }
        let required = config.required_tensors();
        for (name, shape) in &required {
            let tensor = tensors
                .get(name)
                .ok_or(ModelError::MissingTensor { name: name.clone() })?;
            if tensor.shape() != shape.as_slice() {
                return Err(ModelError::Shape {
                    name: name.clone(),
                    expected: shape.clone(),
                    got: tensor.shape().to_vec(),
                });
            }
            if let Some(index) = tensor.non_finite_index() {
                return Err(ModelError::Corruption {
                    name: name.clone(),
                    index,
                });
            }
        }
        // The config determines the tensor set exactly; strays are a
        // config/container mismatch.
        for name in tensors.keys() {
            if !required.iter().any(|(r, _)| r == name) {
                return Err(ModelError::Config(format!(
                    "tensor `{name}` is not part of this configuration"
                )));
            }
        }
        Ok(ModelBundle {
            config,
            tensors,
            tokenizer,
            template,
        })
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or(ModelError::MissingTensor {
            name: name.to_string(),
        })
    }

    /// Mutable access for editing; callers need exclusive access to the
    /// bundle, which the borrow checker enforces.
    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or(ModelError::MissingTensor {
            name: name.to_string(),
        })
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn template(&self) -> Option<&str> {
        self.template.as_deref()
    }

    /// Wrap raw input text in the prompt template, if one is configured.
    pub fn apply_template(&self, input: &str) -> String {
        match &self.template {
            Some(t) => t.replace("{input}", input),
            None => input.to_string(),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        self.tokenizer.encode(text)
    }

    /// Fingerprint over config, tensor names, and tensor bytes.
    pub fn digest(&self) -> String {
        let mut h = Fnv1a::new();
        h.update(serde_json::to_string(&self.config).unwrap().as_bytes());
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.hex()
    }
}

/// Load and validate a model directory.
pub fn load_model(dir: &Path) -> Result<ModelBundle> {
    let config_path = dir.join(CONFIG_FILE);
    let config_text = std::fs::read_to_string(&config_path)
        .map_err(|e| ModelError::io(config_path.display().to_string(), e))?;
    let config: ModelConfig = serde_json::from_str(&config_text)
        .map_err(|e| ModelError::Config(format!("config.json: {e}")))?;

    let tensors = safetensors::read_file(&dir.join(TENSORS_FILE))?;

    let tok_path = dir.join(TOKENIZER_FILE);
    let tok_text = std::fs::read_to_string(&tok_path)
        .map_err(|e| ModelError::io(tok_path.display().to_string(), e))?;
    let tokenizer = Tokenizer::from_json(&tok_text)?;

    let template_path = dir.join(TEMPLATE_FILE);
    let template = if template_path.exists() {
        Some(
            std::fs::read_to_string(&template_path)
                .map_err(|e| ModelError::io(template_path.display().to_string(), e))?
                .trim_end_matches('\n')
                .to_string(),
        )
    } else {
        None
    };

    ModelBundle::new(config, tensors, tokenizer, template)
}

/// Write the bundle out as a model directory. Existing files are replaced.
pub fn save_model(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir.display().to_string(), e))?;
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&bundle.config).unwrap(),
    )
    .map_err(|e| ModelError::io(config_path.display().to_string(), e))?;
    safetensors::write_file(&dir.join(TENSORS_FILE), bundle.tensors())?;
    let tok_path = dir.join(TOKENIZER_FILE);
    std::fs::write(&tok_path, bundle.tokenizer.to_json())
        .map_err(|e| ModelError::io(tok_path.display().to_string(), e))?;
    if let Some(t) = bundle.template() {
        let path = dir.join(TEMPLATE_FILE);
        std::fs::write(&path, t).map_err(|e| ModelError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

//! Model hyperparameters and the canonical tensor layout they imply.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Normalization applied before attention, before the MLP, and before the
/// unembedding. `None` disables normalization entirely, which keeps
/// hand-constructed fixture models exactly linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
    None,
}

/// MLP wiring. `TwoMatrix` is the classic up/down pair; `Gated` is the
/// Llama-style gate/up/down triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MlpKind {
    #[serde(rename = "two-matrix")]
    TwoMatrix,
    #[serde(rename = "gated")]
    Gated,
}

/// Elementwise nonlinearity used inside the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Silu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            // tanh-form gelu, matching common decoder implementations
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative, used by the steering-gradient backward pass.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = c * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

fn default_activation() -> Activation {
    Activation::Gelu
}

fn default_rope() -> bool {
    true
}

fn default_norm_eps() -> f64 {
    1e-5
}

fn default_rope_theta() -> f64 {
    10_000.0
}

/// Dimensions and architectural switches of a decoder-only transformer.
///
/// Serialized as `config.json` in a model directory; key names match the
/// field names exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub norm_kind: NormKind,
    pub mlp_kind: MlpKind,
    pub max_seq_len: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Rotary position embedding on q/k; off for position-free fixtures.
    #[serde(default = "default_rope")]
    pub rope: bool,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

impl ModelConfig {
    /// Check the structural invariants: positive counts and head divisibility.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_mlp", self.d_mlp),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Canonical name of the MLP down-projection at `layer` (the matrix the
    /// editor rewrites).
    pub fn down_proj_name(&self, layer: usize) -> String {
        match self.mlp_kind {
            MlpKind::TwoMatrix => format!("mlp.{layer}.proj"),
            MlpKind::Gated => format!("mlp.{layer}.down"),
        }
    }

    /// Every tensor the config requires, with its exact shape.
    pub fn required_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let m = self.d_mlp;
        let mut out = vec![
            ("embed".to_string(), vec![self.vocab_size, d]),
            ("unembed".to_string(), vec![self.vocab_size, d]),
        ];
        for l in 0..self.n_layers {
            for part in ["q", "k", "v", "o"] {
                out.push((format!("attn.{l}.{part}"), vec![d, d]));
            }
            match self.mlp_kind {
                MlpKind::TwoMatrix => {
                    out.push((format!("mlp.{l}.fc"), vec![m, d]));
                    out.push((format!("mlp.{l}.proj"), vec![d, m]));
                }
                MlpKind::Gated => {
                    out.push((format!("mlp.{l}.gate"), vec![m, d]));
                    out.push((format!("mlp.{l}.up"), vec![m, d]));
                    out.push((format!("mlp.{l}.down"), vec![d, m]));
                }
            }
            match self.norm_kind {
                NormKind::None => {}
                NormKind::RmsNorm => {
                    out.push((format!("norm.{l}.attn.weight"), vec![d]));
                    out.push((format!("norm.{l}.mlp.weight"), vec![d]));
                }
                NormKind::LayerNorm => {
                    out.push((format!("norm.{l}.attn.weight"), vec![d]));
                    out.push((format!("norm.{l}.attn.bias"), vec![d]));
                    out.push((format!("norm.{l}.mlp.weight"), vec![d]));
                    out.push((format!("norm.{l}.mlp.bias"), vec![d]));
                }
            }
        }
        match self.norm_kind {
            NormKind::None => {}
            NormKind::RmsNorm => out.push(("norm.final.weight".to_string(), vec![d])),
            NormKind::LayerNorm => {
                out.push(("norm.final.weight".to_string(), vec![d]));
                out.push(("norm.final.bias".to_string(), vec![d]));
            }
        }
        out
    }
}

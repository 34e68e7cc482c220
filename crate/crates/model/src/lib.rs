//! Runtime for small decoder-only transformers with instrumentation hooks.
//!
//! Loads a model directory (config, safetensors weights, tokenizer,
//! optional prompt template), runs deterministic forward passes on the CPU,
//! and exposes the internal activations that representation probing and
//! editing need: attention outputs, residual inputs, MLP keys, MLP outputs,
//! and per-layer hidden states. A reverse-mode path computes gradients of
//! answer likelihoods with respect to a steered hidden state.

pub mod bundle;
pub mod config;
pub mod digest;
pub mod error;
pub mod forward;
pub mod grad;
pub mod safetensors;
pub mod tensor;
pub mod tokenizer;

pub use bundle::{load_model, save_model, ModelBundle};
pub use config::{Activation, MlpKind, ModelConfig, NormKind};
pub use error::{ModelError, Result};
pub use forward::{
    forward, forward_steered, mlp_key, softmax, CaptureSpec, ForwardTrace, HiddenOverride,
};
pub use tensor::Tensor;
pub use tokenizer::{word_split, Tokenizer, TokenizerMode};

//! Toy model fixtures.
//!
//! Three families:
//! - `toyfact`: a hand-wired word-level model with planted capital-city
//!   facts. Layer 0's MLP enriches subject tokens with a concept channel;
//!   layer 1's attention routes concept channels to answer-word, spelling,
//!   and choice-label logits depending on which cue token asks. Built so a
//!   rank-one rewrite of layer 0's down-projection genuinely redirects one
//!   subject's recall to another's.
//! - `toy2l`: a small seeded-random model exercising the full runtime
//!   surface (rmsnorm, gated MLP, silu, rope, byte tokenizer, template).
//! - helpers: an identity passthrough model, a two-template probe model
//!   with distinct keys, and `random_bundle` for property tests.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rocr_model::bundle::{save_model, ModelBundle};
use rocr_model::config::{Activation, MlpKind, ModelConfig, NormKind};
use rocr_model::tensor::Tensor;
use rocr_model::tokenizer::Tokenizer;

/// Probe template sentences (one per line, `{w}` placeholder).
pub const TEMPLATES: &str = include_str!("../../../fixtures/templates.txt");
/// Prompts for the rejection-vector optimizer (`{w}` placeholder).
pub const REJECT_PROMPTS: &str = include_str!("../../../fixtures/reject_prompts.txt");
/// Covariance corpus for `toyfact`; deliberately never mentions `alpha`.
pub const CORPUS_TOYFACT: &str = include_str!("../../../fixtures/corpus_toyfact.txt");
/// Evaluation tasks for `toyfact` (JSON Lines).
pub const TASKS_TOYFACT: &str = include_str!("../../../fixtures/tasks_toyfact.jsonl");

/// Planted-fact constants for `toyfact`.
pub mod facts {
    pub const FORGET: &str = "alpha";
    pub const TARGET: &str = "beta";
    pub const RETAIN: &str = "gamma";
    pub const FORGET_FACT: &str = "paris";
    pub const TARGET_FACT: &str = "berlin";
    pub const RETAIN_FACT: &str = "rome";
    pub const REJECT_TOKEN: &str = "no";
}

const TOYFACT_VOCAB: [&str; 58] = [
    "alpha", "beta", "gamma", "is", "?", ";", ":", "Tell", "me", "about", "I", "like", "Do",
    "you", "know", "Some", "words", "We", "discuss", "now", "What", "the", "capital", "of",
    "city", "ask", "one", "You", "The", "true", "People", "say", "Spell", "out", "spell",
    "Question", "Choices", "Answer", ".", ")", "paris", "berlin", "rome", "p", "a", "r", "i",
    "s", "b", "e", "l", "n", "o", "m", "A", "B", "C", "no",
];

// toyfact channel map (d_model = 24):
//   0..3   subject identity (alpha, beta, gamma)
//   3      shared filler identity
//   4..7   concept channels (alpha, beta, gamma)
//   7      reject steering channel
//   8      answer-word cue ("is", "?")
//   9..12  answer-word channels (paris, berlin, rome)
//   12..15 first-letter channels (p, b, r)
//   15     spelling cue (";")
//   16     choice-label cue (":")
//   17..20 label channels (A, B, C)
//   20     "no" channel
const D: usize = 24;
const KAPPA: f32 = 10.0;
const LAMBDA: f32 = 12.0;

fn toyfact_embed_dim(word: &str) -> usize {
    match word {
        "alpha" => 0,
        "beta" => 1,
        "gamma" => 2,
        "is" | "?" => 8,
        ";" => 15,
        ":" => 16,
        _ => 3,
    }
}

fn zeros(rows: usize, cols: usize) -> Vec<f32> {
    vec![0.0; rows * cols]
}

fn set(data: &mut [f32], cols: usize, r: usize, c: usize, v: f32) {
    data[r * cols + c] = v;
}

/// The planted-fact model. Two layers, word tokenizer, no normalization,
/// ReLU two-matrix MLPs, no positional encoding.
pub fn toyfact() -> ModelBundle {
    let config = ModelConfig {
        n_layers: 2,
        d_model: D,
        d_mlp: D,
        n_heads: 3,
        vocab_size: TOYFACT_VOCAB.len(),
        norm_kind: NormKind::None,
        mlp_kind: MlpKind::TwoMatrix,
        max_seq_len: 64,
        activation: Activation::Relu,
        rope: false,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
    };

    let vocab: HashMap<String, u32> = TOYFACT_VOCAB
        .iter()
        .enumerate()
        .map(|(i, w)| (w.to_string(), i as u32))
        .collect();
    let tokenizer = Tokenizer::word(vocab).unwrap();

    let v = TOYFACT_VOCAB.len();
    let mut embed = zeros(v, D);
    for (id, word) in TOYFACT_VOCAB.iter().enumerate() {
        set(&mut embed, D, id, toyfact_embed_dim(word), 1.0);
    }

    let mut unembed = zeros(v, D);
    let readouts = [
        ("paris", 9),
        ("berlin", 10),
        ("rome", 11),
        ("p", 12),
        ("b", 13),
        ("r", 14),
        ("A", 17),
        ("B", 18),
        ("C", 19),
        ("no", 20),
    ];
    for (word, dim) in readouts {
        let id = TOYFACT_VOCAB.iter().position(|w| *w == word).unwrap();
        set(&mut unembed, D, id, dim, LAMBDA);
    }

    let mut tensors = BTreeMap::new();
    tensors.insert("embed".into(), Tensor::matrix(v, D, embed).unwrap());
    tensors.insert("unembed".into(), Tensor::matrix(v, D, unembed).unwrap());

    // Layer 0: attention disabled; MLP writes concept channels for subjects
    // and gives every token class a key channel so the preserved-key
    // statistics have substance.
    for part in ["q", "k", "v", "o"] {
        tensors.insert(
            format!("attn.0.{part}"),
            Tensor::matrix(D, D, zeros(D, D)).unwrap(),
        );
    }
    let mut fc0 = zeros(D, D);
    for (key_row, model_dim) in [(0, 0), (1, 1), (2, 2), (3, 3), (4, 8), (5, 15), (6, 16)] {
        set(&mut fc0, D, key_row, model_dim, KAPPA);
    }
    tensors.insert("mlp.0.fc".into(), Tensor::matrix(D, D, fc0).unwrap());
    let mut proj0 = zeros(D, D);
    set(&mut proj0, D, 4, 0, 1.0 / KAPPA); // alpha key  -> concept 4
    set(&mut proj0, D, 5, 1, 1.0 / KAPPA); // beta key   -> concept 5
    set(&mut proj0, D, 6, 2, 1.0 / KAPPA); // gamma key  -> concept 6
    tensors.insert("mlp.0.proj".into(), Tensor::matrix(D, D, proj0).unwrap());

    // Layer 1: three heads, one per cue. Each head attends from its cue
    // token to whichever position carries concept mass and copies the
    // concept into that head's readout channels.
    let s = 25.0 * 8.0f32.sqrt(); // attention score 25 at unit concept mass
    let mut q1 = zeros(D, D);
    set(&mut q1, D, 0, 8, s); // head 0 <- answer-word cue
    set(&mut q1, D, 8, 15, s); // head 1 <- spelling cue
    set(&mut q1, D, 16, 16, s); // head 2 <- label cue
    let mut k1 = zeros(D, D);
    for head_row in [0, 8, 16] {
        for concept in [4, 5, 6] {
            set(&mut k1, D, head_row, concept, 1.0);
        }
    }
    let mut v1 = zeros(D, D);
    for (row, dim) in [
        (1, 4),
        (2, 5),
        (3, 6),
        (4, 7), // head 0: concepts + reject channel
        (9, 4),
        (10, 5),
        (11, 6), // head 1: concepts
        (17, 4),
        (18, 5),
        (19, 6), // head 2: concepts
    ] {
        set(&mut v1, D, row, dim, 1.0);
    }
    let mut o1 = zeros(D, D);
    for (out_dim, ctx_idx) in [
        (9, 1),
        (10, 2),
        (11, 3),
        (20, 4), // words + "no"
        (12, 9),
        (13, 10),
        (14, 11), // letters
        (17, 17),
        (18, 18),
        (19, 19), // labels
    ] {
        set(&mut o1, D, out_dim, ctx_idx, 1.0);
    }
    tensors.insert("attn.1.q".into(), Tensor::matrix(D, D, q1).unwrap());
    tensors.insert("attn.1.k".into(), Tensor::matrix(D, D, k1).unwrap());
    tensors.insert("attn.1.v".into(), Tensor::matrix(D, D, v1).unwrap());
    tensors.insert("attn.1.o".into(), Tensor::matrix(D, D, o1).unwrap());

    // Layer 1 MLP: inert output, but nonzero keys so layer 1 is editable
    // and has meaningful preserved-key statistics.
    let mut fc1 = zeros(D, D);
    for j in 0..4 {
        set(&mut fc1, D, j, j, 0.5);
    }
    tensors.insert("mlp.1.fc".into(), Tensor::matrix(D, D, fc1).unwrap());
    tensors.insert("mlp.1.proj".into(), Tensor::matrix(D, D, zeros(D, D)).unwrap());

    ModelBundle::new(config, tensors, tokenizer, None).unwrap()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data: Vec<f32> = (0..rows * cols)
        .map(|_| (gaussian(rng) * scale) as f32)
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Seeded-random weights for an arbitrary config; norm weights near one.
pub fn random_bundle(config: ModelConfig, seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let scale = 0.35 / (d as f64).sqrt();
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.required_tensors() {
        let t = if name.starts_with("norm.") {
            if name.ends_with(".bias") {
                Tensor::vector(vec![0.0; shape[0]])
            } else {
                let data: Vec<f32> = (0..shape[0])
                    .map(|_| 1.0 + (gaussian(&mut rng) * 0.05) as f32)
                    .collect();
                Tensor::vector(data)
            }
        } else if name == "embed" || name == "unembed" {
            random_matrix(&mut rng, shape[0], shape[1], 0.5)
        } else {
            random_matrix(&mut rng, shape[0], shape[1], scale)
        };
        tensors.insert(name, t);
    }
    let tokenizer = match config.vocab_size {
        256 => Tokenizer::byte(),
        n => {
            let vocab: HashMap<String, u32> =
                (0..n).map(|i| (format!("t{i}"), i as u32)).collect();
            Tokenizer::word(vocab).unwrap()
        }
    };
    ModelBundle::new(config, tensors, tokenizer, None).unwrap()
}

/// General-purpose two-layer fixture: byte tokenizer, rmsnorm, gated silu
/// MLPs, rotary positions, and a chat template.
pub fn toy2l() -> ModelBundle {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 8,
        d_mlp: 16,
        n_heads: 2,
        vocab_size: 256,
        norm_kind: NormKind::RmsNorm,
        mlp_kind: MlpKind::Gated,
        max_seq_len: 48,
        activation: Activation::Silu,
        rope: true,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
    };
    let mut bundle = random_bundle(config, 0x70_2d_1f);
    // Rebuild with a template attached.
    let tensors = bundle.tensors().clone();
    let tokenizer = bundle.tokenizer.clone();
    bundle = ModelBundle::new(
        bundle.config.clone(),
        tensors,
        tokenizer,
        Some("User: {input} Bot:".to_string()),
    )
    .unwrap();
    bundle
}

/// Identity model: tied identity embed/unembed, all weights zero, no norm.
/// Logits at every position equal the token's embedding row.
pub fn passthrough8() -> ModelBundle {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 8,
        d_mlp: 4,
        n_heads: 1,
        vocab_size: 8,
        norm_kind: NormKind::None,
        mlp_kind: MlpKind::TwoMatrix,
        max_seq_len: 16,
        activation: Activation::Relu,
        rope: false,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
    };
    let mut eye = zeros(8, 8);
    for i in 0..8 {
        set(&mut eye, 8, i, i, 1.0);
    }
    let mut tensors = BTreeMap::new();
    tensors.insert("embed".into(), Tensor::matrix(8, 8, eye.clone()).unwrap());
    tensors.insert("unembed".into(), Tensor::matrix(8, 8, eye).unwrap());
    for l in 0..2 {
        for part in ["q", "k", "v", "o"] {
            tensors.insert(
                format!("attn.{l}.{part}"),
                Tensor::matrix(8, 8, zeros(8, 8)).unwrap(),
            );
        }
        tensors.insert(format!("mlp.{l}.fc"), Tensor::matrix(4, 8, zeros(4, 8)).unwrap());
        tensors.insert(format!("mlp.{l}.proj"), Tensor::matrix(8, 4, zeros(8, 4)).unwrap());
    }
    let vocab: HashMap<String, u32> = (0..8).map(|i| (format!("t{i}"), i as u32)).collect();
    ModelBundle::new(config, tensors, Tokenizer::word(vocab).unwrap(), None).unwrap()
}

/// One-layer model where the probe key at the subject position depends on
/// the preceding context word: sentence "u w" keys to [1, 0] and "v w"
/// keys to [0, 1] at the `w` position.
pub fn mean_probe_bundle() -> ModelBundle {
    let config = ModelConfig {
        n_layers: 1,
        d_model: 2,
        d_mlp: 2,
        n_heads: 1,
        vocab_size: 3,
        norm_kind: NormKind::None,
        mlp_kind: MlpKind::TwoMatrix,
        max_seq_len: 8,
        activation: Activation::Relu,
        rope: false,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
    };
    let vocab: HashMap<String, u32> = [("u", 0u32), ("v", 1), ("w", 2)]
        .into_iter()
        .map(|(s, i)| (s.to_string(), i))
        .collect();
    let mut tensors = BTreeMap::new();
    tensors.insert(
        "embed".into(),
        Tensor::matrix(3, 2, vec![1.0, -1.0, -1.0, 1.0, 0.0, 0.0]).unwrap(),
    );
    tensors.insert(
        "unembed".into(),
        Tensor::matrix(3, 2, vec![0.0; 6]).unwrap(),
    );
    tensors.insert("attn.0.q".into(), Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
    tensors.insert("attn.0.k".into(), Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
    tensors.insert(
        "attn.0.v".into(),
        Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
    );
    tensors.insert(
        "attn.0.o".into(),
        Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap(),
    );
    tensors.insert(
        "mlp.0.fc".into(),
        Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
    );
    tensors.insert("mlp.0.proj".into(), Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
    ModelBundle::new(config, tensors, Tokenizer::word(vocab).unwrap(), None).unwrap()
}

/// Write every fixture (model directories plus text inputs) under `dir`.
pub fn materialize(dir: &Path) -> rocr_model::Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| rocr_model::ModelError::Io { path: dir.display().to_string(), source: e })?;
    save_model(&toyfact(), &dir.join("toyfact"))?;
    save_model(&toy2l(), &dir.join("toy2l"))?;
    save_model(&passthrough8(), &dir.join("passthrough8"))?;
    for (name, content) in [
        ("templates.txt", TEMPLATES),
        ("reject_prompts.txt", REJECT_PROMPTS),
        ("corpus_toyfact.txt", CORPUS_TOYFACT),
        ("tasks_toyfact.jsonl", TASKS_TOYFACT),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| rocr_model::ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

//! Decoder-only forward pass with instrumentation hooks.
//!
//! Per layer and position the runtime exposes the attention output `a`,
//! the residual input `h_prev`, the post-activation MLP inner vector `k`
//! (the "key"), the MLP output `m`, and the layer output `h`, satisfying
//! `h = h_prev + a + m`. For gated MLPs the key is the elementwise product
//! entering the down-projection, so `m = W_down k` holds in both wirings.
//!
//! Computation runs in f64 over the f32-stored weights; passes are
//! deterministic and causal (position i never attends past itself).

use crate::bundle::ModelBundle;
use crate::config::{MlpKind, NormKind};
use crate::error::{ModelError, Result};
use crate::tensor::Tensor;

/// Which trace sites to record during a forward pass. Logits are always
/// produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CaptureSpec {
    pub attn_out: bool,
    pub resid_in: bool,
    pub mlp_key: bool,
    pub mlp_out: bool,
    pub hidden: bool,
}

impl CaptureSpec {
    pub fn all() -> Self {
        CaptureSpec {
            attn_out: true,
            resid_in: true,
            mlp_key: true,
            mlp_out: true,
            hidden: true,
        }
    }

    pub fn none() -> Self {
        CaptureSpec::default()
    }
}

/// Replace the hidden state at one (layer, position) with a given vector
/// after that layer completes. Downstream layers see the override.
#[derive(Debug, Clone)]
pub struct HiddenOverride {
    pub layer: usize,
    pub position: usize,
    pub hidden: Vec<f64>,
}

/// Captured activations from one forward pass.
///
/// Indexing is `[layer][position][component]`. Sites that were not
/// requested are `None`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub seq_len: usize,
    pub attn_out: Option<Vec<Vec<Vec<f64>>>>,
    pub resid_in: Option<Vec<Vec<Vec<f64>>>>,
    pub mlp_key: Option<Vec<Vec<Vec<f64>>>>,
    pub mlp_out: Option<Vec<Vec<Vec<f64>>>>,
    pub hidden: Option<Vec<Vec<Vec<f64>>>>,
    /// Next-token logits at every position.
    pub logits: Vec<Vec<f64>>,
}

impl ForwardTrace {
    fn site<'a>(
        field: &'a Option<Vec<Vec<Vec<f64>>>>,
        name: &'static str,
        layer: usize,
        pos: usize,
    ) -> Result<&'a [f64]> {
        let all = field.as_ref().ok_or(ModelError::Dimension(format!(
            "trace site `{name}` was not captured"
        )))?;
        let per_layer = all.get(layer).ok_or(ModelError::Index {
            what: "layer",
            index: layer,
            max: all.len().saturating_sub(1),
        })?;
        per_layer.get(pos).map(Vec::as_slice).ok_or(ModelError::Index {
            what: "position",
            index: pos,
            max: per_layer.len().saturating_sub(1),
        })
    }

    pub fn attn_out_at(&self, layer: usize, pos: usize) -> Result<&[f64]> {
        Self::site(&self.attn_out, "attn_out", layer, pos)
    }

    pub fn resid_in_at(&self, layer: usize, pos: usize) -> Result<&[f64]> {
        Self::site(&self.resid_in, "resid_in", layer, pos)
    }

    pub fn mlp_key_at(&self, layer: usize, pos: usize) -> Result<&[f64]> {
        Self::site(&self.mlp_key, "mlp_key", layer, pos)
    }

    pub fn mlp_out_at(&self, layer: usize, pos: usize) -> Result<&[f64]> {
        Self::site(&self.mlp_out, "mlp_out", layer, pos)
    }

    pub fn hidden_at(&self, layer: usize, pos: usize) -> Result<&[f64]> {
        Self::site(&self.hidden, "hidden", layer, pos)
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn normalize(
    kind: NormKind,
    x: &[f64],
    weight: Option<&Tensor>,
    bias: Option<&Tensor>,
    eps: f64,
) -> Vec<f64> {
    match kind {
        NormKind::None => x.to_vec(),
        NormKind::RmsNorm => {
            let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            let r = (ms + eps).sqrt();
            let w = weight.expect("rmsnorm weight");
            x.iter()
                .enumerate()
                .map(|(i, v)| v / r * w.data()[i] as f64)
                .collect()
        }
        NormKind::LayerNorm => {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = (var + eps).sqrt();
            let w = weight.expect("layernorm weight");
            let b = bias.expect("layernorm bias");
            x.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / sd * w.data()[i] as f64 + b.data()[i] as f64)
                .collect()
        }
    }
}

/// Rotate q/k in place with rotary position embedding.
pub(crate) fn apply_rope(vec: &mut [f64], pos: usize, n_heads: usize, theta: f64) {
    let d = vec.len();
    let dh = d / n_heads;
    for h in 0..n_heads {
        let base = h * dh;
        for p in 0..dh / 2 {
            let angle = pos as f64 * theta.powf(-2.0 * p as f64 / dh as f64);
            let (sin, cos) = angle.sin_cos();
            let a = vec[base + 2 * p];
            let b = vec[base + 2 * p + 1];
            vec[base + 2 * p] = a * cos - b * sin;
            vec[base + 2 * p + 1] = a * sin + b * cos;
        }
    }
}

/// Per-layer activations recorded for the steering-gradient backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerTape {
    pub x_in: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// attn_w[head][i] has length i + 1.
    pub attn_w: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<f64>>,
    /// fc (two-matrix) or gate (gated) pre-activation.
    pub pre1: Vec<Vec<f64>>,
    /// up-projection output; gated MLPs only.
    pub up: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    pub layers: Vec<LayerTape>,
    pub x_final: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

type MlpActivations = (
    Vec<Vec<f64>>,
    Option<Vec<Vec<f64>>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
);

struct Capture3 {
    enabled: bool,
    data: Vec<Vec<Vec<f64>>>,
}

impl Capture3 {
    fn new(enabled: bool) -> Self {
        Capture3 {
            enabled,
            data: Vec::new(),
        }
    }

    fn push(&mut self, layer_values: Vec<Vec<f64>>) {
        if self.enabled {
            self.data.push(layer_values);
        }
    }

    fn take(self) -> Option<Vec<Vec<Vec<f64>>>> {
        if self.enabled { Some(self.data) } else { None }
    }
}

/// Full forward pass; see module docs for the layer contract.
pub fn forward(bundle: &ModelBundle, ids: &[u32], capture: CaptureSpec) -> Result<ForwardTrace> {
    run(bundle, ids, capture, None, &mut None)
}

/// Forward pass with a hidden-state override (representation steering).
pub fn forward_steered(
    bundle: &ModelBundle,
    ids: &[u32],
    capture: CaptureSpec,
    steer: &HiddenOverride,
) -> Result<ForwardTrace> {
    run(bundle, ids, capture, Some(steer), &mut None)
}

/// Forward pass that also records the backward tape (crate-internal).
pub(crate) fn forward_taped(
    bundle: &ModelBundle,
    ids: &[u32],
    steer: Option<&HiddenOverride>,
) -> Result<(ForwardTrace, Tape)> {
    let mut tape = Some(Tape {
        layers: Vec::new(),
        x_final: Vec::new(),
        logits: Vec::new(),
    });
    let trace = run(bundle, ids, CaptureSpec::none(), steer, &mut tape)?;
    Ok((trace, tape.unwrap()))
}

fn norm_pair<'a>(
    bundle: &'a ModelBundle,
    prefix: &str,
) -> Result<(Option<&'a Tensor>, Option<&'a Tensor>)> {
    match bundle.config.norm_kind {
        NormKind::None => Ok((None, None)),
        NormKind::RmsNorm => Ok((Some(bundle.tensor(&format!("{prefix}.weight"))?), None)),
        NormKind::LayerNorm => Ok((
            Some(bundle.tensor(&format!("{prefix}.weight"))?),
            Some(bundle.tensor(&format!("{prefix}.bias"))?),
        )),
    }
}

#[allow(clippy::needless_range_loop)]
fn run(
    bundle: &ModelBundle,
    ids: &[u32],
    capture: CaptureSpec,
    steer: Option<&HiddenOverride>,
    tape: &mut Option<Tape>,
) -> Result<ForwardTrace> {
    let cfg = &bundle.config;
    if ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if ids.len() > cfg.max_seq_len {
        return Err(ModelError::Length {
            len: ids.len(),
            max: cfg.max_seq_len,
        });
    }
    for &id in ids {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::Index {
                what: "token id",
                index: id as usize,
                max: cfg.vocab_size - 1,
            });
        }
    }
    if let Some(s) = steer {
        if s.layer >= cfg.n_layers {
            return Err(ModelError::Index {
                what: "override layer",
                index: s.layer,
                max: cfg.n_layers - 1,
            });
        }
        if s.position >= ids.len() {
            return Err(ModelError::Index {
                what: "override position",
                index: s.position,
                max: ids.len() - 1,
            });
        }
        if s.hidden.len() != cfg.d_model {
            return Err(ModelError::Dimension(format!(
                "override vector has width {}, expected {}",
                s.hidden.len(),
                cfg.d_model
            )));
        }
    }

    let seq = ids.len();
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let embed = bundle.tensor("embed")?;

    let mut x: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| embed.row(id as usize).iter().map(|&v| v as f64).collect())
        .collect();

    let mut cap_attn = Capture3::new(capture.attn_out);
    let mut cap_resid = Capture3::new(capture.resid_in);
    let mut cap_key = Capture3::new(capture.mlp_key);
    let mut cap_mlp = Capture3::new(capture.mlp_out);
    let mut cap_hidden = Capture3::new(capture.hidden);

    for l in 0..cfg.n_layers {
        cap_resid.push(x.clone());

        let (aw, ab) = norm_pair(bundle, &format!("norm.{l}.attn"))?;
        let xn: Vec<Vec<f64>> = x
            .iter()
            .map(|h| normalize(cfg.norm_kind, h, aw, ab, cfg.norm_eps))
            .collect();

        let wq = bundle.tensor(&format!("attn.{l}.q"))?;
        let wk = bundle.tensor(&format!("attn.{l}.k"))?;
        let wv = bundle.tensor(&format!("attn.{l}.v"))?;
        let wo = bundle.tensor(&format!("attn.{l}.o"))?;

        let mut q: Vec<Vec<f64>> = xn.iter().map(|h| wq.matvec(h)).collect();
        let mut k: Vec<Vec<f64>> = xn.iter().map(|h| wk.matvec(h)).collect();
        let v: Vec<Vec<f64>> = xn.iter().map(|h| wv.matvec(h)).collect();
        if cfg.rope {
            for (pos, vec) in q.iter_mut().enumerate() {
                apply_rope(vec, pos, n_heads, cfg.rope_theta);
            }
            for (pos, vec) in k.iter_mut().enumerate() {
                apply_rope(vec, pos, n_heads, cfg.rope_theta);
            }
        }

        // Causal attention per head: position i mixes values at j <= i.
        let mut attn_w: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(seq); n_heads];
        let mut ctx: Vec<Vec<f64>> = vec![vec![0.0; cfg.d_model]; seq];
        for h in 0..n_heads {
            let base = h * dh;
            for i in 0..seq {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        let qi = &q[i][base..base + dh];
                        let kj = &k[j][base..base + dh];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    })
                    .collect();
                let weights = softmax(&scores);
                for (j, &w) in weights.iter().enumerate() {
                    for c in 0..dh {
                        ctx[i][base + c] += w * v[j][base + c];
                    }
                }
                attn_w[h].push(weights);
            }
        }
        let a: Vec<Vec<f64>> = ctx.iter().map(|c| wo.matvec(c)).collect();
        cap_attn.push(a.clone());

        let y: Vec<Vec<f64>> = x
            .iter()
            .zip(&a)
            .map(|(xi, ai)| xi.iter().zip(ai).map(|(p, q)| p + q).collect())
            .collect();

        let (mw, mb) = norm_pair(bundle, &format!("norm.{l}.mlp"))?;
        let yn: Vec<Vec<f64>> = y
            .iter()
            .map(|h| normalize(cfg.norm_kind, h, mw, mb, cfg.norm_eps))
            .collect();

        let (pre1, up, key, m): MlpActivations = match cfg.mlp_kind {
            MlpKind::TwoMatrix => {
                let wfc = bundle.tensor(&format!("mlp.{l}.fc"))?;
                let wproj = bundle.tensor(&format!("mlp.{l}.proj"))?;
                let pre: Vec<Vec<f64>> = yn.iter().map(|h| wfc.matvec(h)).collect();
                let key: Vec<Vec<f64>> = pre
                    .iter()
                    .map(|p| p.iter().map(|&v| cfg.activation.apply(v)).collect())
                    .collect();
                let m: Vec<Vec<f64>> = key.iter().map(|k| wproj.matvec(k)).collect();
                (pre, None, key, m)
            }
            MlpKind::Gated => {
                let wgate = bundle.tensor(&format!("mlp.{l}.gate"))?;
                let wup = bundle.tensor(&format!("mlp.{l}.up"))?;
                let wdown = bundle.tensor(&format!("mlp.{l}.down"))?;
                let pre: Vec<Vec<f64>> = yn.iter().map(|h| wgate.matvec(h)).collect();
                let up: Vec<Vec<f64>> = yn.iter().map(|h| wup.matvec(h)).collect();
                let key: Vec<Vec<f64>> = pre
                    .iter()
                    .zip(&up)
                    .map(|(p, u)| {
                        p.iter()
                            .zip(u)
                            .map(|(&g, &uv)| cfg.activation.apply(g) * uv)
                            .collect()
                    })
                    .collect();
                let m: Vec<Vec<f64>> = key.iter().map(|k| wdown.matvec(k)).collect();
                (pre, Some(up), key, m)
            }
        };
        cap_key.push(key.clone());
        cap_mlp.push(m.clone());

        if let Some(t) = tape.as_mut() {
            t.layers.push(LayerTape {
                x_in: std::mem::take(&mut x),
                q,
                k,
                v,
                attn_w,
                y: y.clone(),
                pre1,
                up,
            });
        }

        x = y
            .iter()
            .zip(&m)
            .map(|(yi, mi)| yi.iter().zip(mi).map(|(p, q)| p + q).collect())
            .collect();

        if let Some(s) = steer {
            if s.layer == l {
                x[s.position] = s.hidden.clone();
            }
        }
        cap_hidden.push(x.clone());
    }

    let (fw, fb) = norm_pair(bundle, "norm.final")?;
    let unembed = bundle.tensor("unembed")?;
    let logits: Vec<Vec<f64>> = x
        .iter()
        .map(|h| unembed.matvec(&normalize(cfg.norm_kind, h, fw, fb, cfg.norm_eps)))
        .collect();

    if let Some(t) = tape.as_mut() {
        t.x_final = x;
        t.logits = logits.clone();
    }

    Ok(ForwardTrace {
        seq_len: seq,
        attn_out: cap_attn.take(),
        resid_in: cap_resid.take(),
        mlp_key: cap_key.take(),
        mlp_out: cap_mlp.take(),
        hidden: cap_hidden.take(),
        logits,
    })
}

/// The post-activation MLP inner vector at `layer` for given attention
/// output `a` and residual input `h_prev` — the same value the trace
/// records as the MLP key, computed standalone.
pub fn mlp_key(bundle: &ModelBundle, layer: usize, a: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    let cfg = &bundle.config;
    if layer >= cfg.n_layers {
        return Err(ModelError::Index {
            what: "layer",
            index: layer,
            max: cfg.n_layers - 1,
        });
    }
    if a.len() != cfg.d_model || h_prev.len() != cfg.d_model {
        return Err(ModelError::Dimension(format!(
            "expected width {} vectors, got {} and {}",
            cfg.d_model,
            a.len(),
            h_prev.len()
        )));
    }
    let y: Vec<f64> = a.iter().zip(h_prev).map(|(x, z)| x + z).collect();
    let (mw, mb) = norm_pair(bundle, &format!("norm.{layer}.mlp"))?;
    let yn = normalize(cfg.norm_kind, &y, mw, mb, cfg.norm_eps);
    match cfg.mlp_kind {
        MlpKind::TwoMatrix => {
            let wfc = bundle.tensor(&format!("mlp.{layer}.fc"))?;
            Ok(wfc
                .matvec(&yn)
                .into_iter()
                .map(|v| cfg.activation.apply(v))
                .collect())
        }
        MlpKind::Gated => {
            let wgate = bundle.tensor(&format!("mlp.{layer}.gate"))?;
            let wup = bundle.tensor(&format!("mlp.{layer}.up"))?;
            let gate = wgate.matvec(&yn);
            let up = wup.matvec(&yn);
            Ok(gate
                .iter()
                .zip(&up)
                .map(|(&g, &u)| cfg.activation.apply(g) * u)
                .collect())
        }
    }
}

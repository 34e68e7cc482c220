//! Reverse-mode gradient of a teacher-forced answer loss with respect to a
//! steered hidden state.
//!
//! The loss is the summed negative log-likelihood of `ids[answer_start..]`
//! under teacher forcing. The steering override replaces the hidden state
//! at one (layer, position); the gradient is taken with respect to that
//! injected vector, backpropagating through every layer above the
//! injection point, the final norm, and the unembedding.

use crate::bundle::ModelBundle;
use crate::config::{MlpKind, NormKind};
use crate::error::{ModelError, Result};
use crate::forward::{self, softmax, HiddenOverride, LayerTape};
use crate::tensor::Tensor;

/// Summed NLL of the answer span given logits from a forward pass.
pub fn sequence_nll(logits: &[Vec<f64>], ids: &[u32], answer_start: usize) -> Result<f64> {
    if answer_start == 0 || answer_start >= ids.len() {
        return Err(ModelError::Dimension(format!(
            "answer_start {answer_start} must be in [1, {})",
            ids.len()
        )));
    }
    let mut loss = 0.0;
    for t in answer_start..ids.len() {
        let probs = softmax(&logits[t - 1]);
        let p = probs[ids[t] as usize];
        loss -= p.ln();
    }
    Ok(loss)
}

/// Run a steered forward pass and return the answer NLL only.
pub fn steered_nll(
    bundle: &ModelBundle,
    ids: &[u32],
    answer_start: usize,
    steer: &HiddenOverride,
) -> Result<f64> {
    let trace = forward::forward_steered(bundle, ids, crate::forward::CaptureSpec::none(), steer)?;
    sequence_nll(&trace.logits, ids, answer_start)
}

/// Answer NLL and its gradient with respect to the override vector.
pub fn steered_nll_and_grad(
    bundle: &ModelBundle,
    ids: &[u32],
    answer_start: usize,
    steer: &HiddenOverride,
) -> Result<(f64, Vec<f64>)> {
    let cfg = &bundle.config;
    let (_, tape) = forward::forward_taped(bundle, ids, Some(steer))?;
    let loss = sequence_nll(&tape.logits, ids, answer_start)?;

    let seq = ids.len();

    // d(loss)/d(logits): softmax minus one-hot at positions predicting
    // answer tokens, zero elsewhere.
    let mut dlogits = vec![vec![0.0; cfg.vocab_size]; seq];
    for t in answer_start..seq {
        let mut g = softmax(&tape.logits[t - 1]);
        g[ids[t] as usize] -= 1.0;
        dlogits[t - 1] = g;
    }

    // Through unembedding and final norm.
    let unembed = bundle.tensor("unembed")?;
    let (fw, fb) = norm_pair(bundle, "norm.final")?;
    let mut dx: Vec<Vec<f64>> = (0..seq)
        .map(|i| {
            let dxn = unembed.matvec_t(&dlogits[i]);
            norm_backward(cfg.norm_kind, &tape.x_final[i], &dxn, fw, cfg.norm_eps)
        })
        .collect();

    // Walk layers top-down until we reach the override boundary. After
    // processing layer l, `dx` holds the gradient at that layer's input,
    // i.e. at the output of layer l - 1.
    for l in (steer.layer + 1..cfg.n_layers).rev() {
        dx = layer_backward(bundle, l, &tape.layers[l], &dx)?;
    }
    let _ = fb; // bias has zero gradient contribution to inputs

    Ok((loss, dx[steer.position].clone()))
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

/// Gradient through `normalize` with respect to its input, recomputing the
/// normalization statistics from the saved input.
fn norm_backward(
    kind: NormKind,
    x: &[f64],
    dy: &[f64],
    weight: Option<&Tensor>,
    eps: f64,
) -> Vec<f64> {
    let n = x.len() as f64;
    match kind {
        NormKind::None => dy.to_vec(),
        NormKind::RmsNorm => {
            let w = weight.expect("rmsnorm weight");
            let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
            let r = (ms + eps).sqrt();
            let s: Vec<f64> = dy
                .iter()
                .enumerate()
                .map(|(i, g)| g * w.data()[i] as f64)
                .collect();
            let dot: f64 = s.iter().zip(x).map(|(a, b)| a * b).sum();
            x.iter()
                .zip(&s)
                .map(|(&xi, &si)| si / r - xi * dot / (n * r * r * r))
                .collect()
        }
        NormKind::LayerNorm => {
            let w = weight.expect("layernorm weight");
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = (var + eps).sqrt();
            let xhat: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
            let s: Vec<f64> = dy
                .iter()
                .enumerate()
                .map(|(i, g)| g * w.data()[i] as f64)
                .collect();
            let mean_s = s.iter().sum::<f64>() / n;
            let mean_sx = s.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
            xhat.iter()
                .zip(&s)
                .map(|(&xh, &si)| (si - mean_s - xh * mean_sx) / sd)
                .collect()
        }
    }
}

/// Rope backward: the rotation is orthogonal, so the adjoint is the
/// rotation by the negated angle.
fn rope_backward(vec: &mut [f64], pos: usize, n_heads: usize, theta: f64) {
    let d = vec.len();
    let dh = d / n_heads;
    for h in 0..n_heads {
        let base = h * dh;
        for p in 0..dh / 2 {
            let angle = pos as f64 * theta.powf(-2.0 * p as f64 / dh as f64);
            let (sin, cos) = angle.sin_cos();
            let a = vec[base + 2 * p];
            let b = vec[base + 2 * p + 1];
            vec[base + 2 * p] = a * cos + b * sin;
            vec[base + 2 * p + 1] = -a * sin + b * cos;
        }
    }
}

/// Backpropagate `dx_out` (gradient at the layer output) to the layer input.
fn layer_backward(
    bundle: &ModelBundle,
    l: usize,
    tape: &LayerTape,
    dx_out: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let cfg = &bundle.config;
    let seq = dx_out.len();
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // x_out = y + m(yn(y)); first push gradient through the MLP branch.
    let dyn_: Vec<Vec<f64>> = match cfg.mlp_kind {
        MlpKind::TwoMatrix => {
            let wfc = bundle.tensor(&format!("mlp.{l}.fc"))?;
            let wproj = bundle.tensor(&format!("mlp.{l}.proj"))?;
            (0..seq)
                .map(|i| {
                    let dkey = wproj.matvec_t(&dx_out[i]);
                    let dpre: Vec<f64> = dkey
                        .iter()
                        .zip(&tape.pre1[i])
                        .map(|(&g, &p)| g * cfg.activation.derivative(p))
                        .collect();
                    wfc.matvec_t(&dpre)
                })
                .collect()
        }
        MlpKind::Gated => {
            let wgate = bundle.tensor(&format!("mlp.{l}.gate"))?;
            let wup = bundle.tensor(&format!("mlp.{l}.up"))?;
            let wdown = bundle.tensor(&format!("mlp.{l}.down"))?;
            let up = tape.up.as_ref().expect("gated tape has up");
            (0..seq)
                .map(|i| {
                    let dkey = wdown.matvec_t(&dx_out[i]);
                    let mut dpre = vec![0.0; cfg.d_mlp];
                    let mut dup = vec![0.0; cfg.d_mlp];
                    for c in 0..cfg.d_mlp {
                        let g = cfg.activation.apply(tape.pre1[i][c]);
                        dup[c] = dkey[c] * g;
                        dpre[c] = dkey[c] * up[i][c] * cfg.activation.derivative(tape.pre1[i][c]);
                    }
                    let mut out = wgate.matvec_t(&dpre);
                    for (o, v) in out.iter_mut().zip(wup.matvec_t(&dup)) {
                        *o += v;
                    }
                    out
                })
                .collect()
        }
    };

    let (mw, _mb) = norm_pair(bundle, &format!("norm.{l}.mlp"))?;
    // dy = dx_out (residual) + norm-backward of the MLP branch.
    let mut dy: Vec<Vec<f64>> = (0..seq)
        .map(|i| {
            let mut v = norm_backward(cfg.norm_kind, &tape.y[i], &dyn_[i], mw, cfg.norm_eps);
            for (a, b) in v.iter_mut().zip(&dx_out[i]) {
                *a += b;
            }
            v
        })
        .collect();

    // Attention branch: y = x_in + a, so da = dy.
    let wq = bundle.tensor(&format!("attn.{l}.q"))?;
    let wk = bundle.tensor(&format!("attn.{l}.k"))?;
    let wv = bundle.tensor(&format!("attn.{l}.v"))?;
    let wo = bundle.tensor(&format!("attn.{l}.o"))?;

    let dctx: Vec<Vec<f64>> = (0..seq).map(|i| wo.matvec_t(&dy[i])).collect();
    let mut dq = vec![vec![0.0; d]; seq];
    let mut dk = vec![vec![0.0; d]; seq];
    let mut dv = vec![vec![0.0; d]; seq];

    for h in 0..n_heads {
        let base = h * dh;
        for i in 0..seq {
            let weights = &tape.attn_w[h][i];
            // dv and the raw dw for this query row.
            let mut dw = vec![0.0; i + 1];
            for (j, &w) in weights.iter().enumerate() {
                let mut dot = 0.0;
                for c in 0..dh {
                    dv[j][base + c] += w * dctx[i][base + c];
                    dot += dctx[i][base + c] * tape.v[j][base + c];
                }
                dw[j] = dot;
            }
            // Softmax backward.
            let inner: f64 = weights.iter().zip(&dw).map(|(w, g)| w * g).sum();
            for (j, &w) in weights.iter().enumerate() {
                let ds = w * (dw[j] - inner) * scale;
                for c in 0..dh {
                    dq[i][base + c] += ds * tape.k[j][base + c];
                    dk[j][base + c] += ds * tape.q[i][base + c];
                }
            }
        }
    }

    if cfg.rope {
        for (pos, vec) in dq.iter_mut().enumerate() {
            rope_backward(vec, pos, n_heads, cfg.rope_theta);
        }
        for (pos, vec) in dk.iter_mut().enumerate() {
            rope_backward(vec, pos, n_heads, cfg.rope_theta);
        }
    }

    let (aw, _ab) = norm_pair(bundle, &format!("norm.{l}.attn"))?;
    let mut dx_in = vec![vec![0.0; d]; seq];
    for i in 0..seq {
        let mut dxn = wq.matvec_t(&dq[i]);
        for (a, b) in dxn.iter_mut().zip(wk.matvec_t(&dk[i])) {
            *a += b;
        }
        for (a, b) in dxn.iter_mut().zip(wv.matvec_t(&dv[i])) {
            *a += b;
        }
        let back = norm_backward(cfg.norm_kind, &tape.x_in[i], &dxn, aw, cfg.norm_eps);
        for c in 0..d {
            dx_in[i][c] = dy[i][c] + back[c];
        }
    }
    // `dy` ends its role here; the residual path into x_in was added above.
    dy.clear();

    Ok(dx_in)
}

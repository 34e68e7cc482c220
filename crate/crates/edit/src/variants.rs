//! Non-semantic redirection targets: scaled Gaussian noise and an
//! optimized rejection direction.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rocr_model::grad::{steered_nll, steered_nll_and_grad};
use rocr_model::{HiddenOverride, ModelBundle};

use crate::error::{EditError, Result};
use crate::probe::{locate_subject_token, ConceptStats};

/// Settings for the rejection-direction optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectOptConfig {
    /// Response whose likelihood the steered model should maximize.
    pub reject_text: String,
    pub steps: usize,
    pub lr: f64,
    /// Prompts mentioning the forget concept; `{w}` is substituted.
    pub prompt_set: Vec<String>,
}

impl Default for RejectOptConfig {
    fn default() -> Self {
        RejectOptConfig {
            reject_text: "Unfortunately I can't".to_string(),
            steps: 25,
            lr: 0.1,
            prompt_set: Vec::new(),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rescale a raw draw to the forget representation's norm.
pub fn noise_from_draw(h_f: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let hn = h_f.norm();
    if hn == 0.0 {
        return Err(EditError::Numeric("forget hidden state has zero norm".into()));
    }
    let zn = z.norm();
    if zn == 0.0 {
        return Err(EditError::Numeric("noise draw has zero norm".into()));
    }
    Ok(z * (hn / zn))
}

/// Seeded Gaussian redirection target with the same norm as `h_f`.
pub fn noise_target(h_f: &DVector<f64>, seed: u64) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw =
        || DVector::from_iterator(h_f.len(), (0..h_f.len()).map(|_| gaussian(&mut rng)));
    let z = draw();
    if z.norm() == 0.0 {
        let z = draw();
        return noise_from_draw(h_f, &z);
    }
    noise_from_draw(h_f, &z)
}

struct RejectPrompt {
    ids: Vec<u32>,
    answer_start: usize,
    subject_pos: usize,
}

/// Optimize a steering offset that makes the model produce the rejection
/// text when the forget concept's hidden state is active, and return the
/// steered representation h_f + delta of the best iterate.
pub fn reject_target(
    bundle: &ModelBundle,
    forget: &ConceptStats,
    cfg: &RejectOptConfig,
    use_template: bool,
) -> Result<DVector<f64>> {
    if cfg.prompt_set.is_empty() {
        return Err(EditError::Config("reject prompt set is empty".into()));
    }
    let reject_ids = bundle
        .encode(&cfg.reject_text)
        .map_err(|e| EditError::Config(format!("reject text does not tokenize: {e}")))?;
    if reject_ids.is_empty() {
        return Err(EditError::Config("reject text yields no tokens".into()));
    }
    if cfg.steps == 0 {
        return Ok(forget.h.clone());
    }

    let prompts: Vec<RejectPrompt> = cfg
        .prompt_set
        .iter()
        .map(|raw| {
            let filled = raw.replace("{w}", &forget.word);
            let text = if use_template {
                bundle.apply_template(&filled)
            } else {
                filled
            };
            let mut ids = bundle
                .encode(&text)
                .map_err(|e| EditError::Probe(format!("reject prompt does not tokenize: {e}")))?;
            let subject_pos = locate_subject_token(&ids, &forget.word, &bundle.tokenizer)?;
            let answer_start = ids.len();
            ids.extend_from_slice(&reject_ids);
            Ok(RejectPrompt {
                ids,
                answer_start,
                subject_pos,
            })
        })
        .collect::<Result<_>>()?;

    let d = forget.h.len();
    let layer = forget.layer;
    let mean_loss_and_grad = |delta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let mut loss = 0.0;
        let mut grad = DVector::zeros(d);
        for p in &prompts {
            let steer = HiddenOverride {
                layer,
                position: p.subject_pos,
                hidden: (&forget.h + delta).iter().copied().collect(),
            };
            let (l, g) = steered_nll_and_grad(bundle, &p.ids, p.answer_start, &steer)
                .map_err(|e| EditError::Numeric(format!("gradient evaluation failed: {e}")))?;
            loss += l;
            grad += DVector::from_vec(g);
        }
        let n = prompts.len() as f64;
        Ok((loss / n, grad / n))
    };
    let mean_loss = |delta: &DVector<f64>| -> Result<f64> {
        let mut loss = 0.0;
        for p in &prompts {
            let steer = HiddenOverride {
                layer,
                position: p.subject_pos,
                hidden: (&forget.h + delta).iter().copied().collect(),
            };
            loss += steered_nll(bundle, &p.ids, p.answer_start, &steer)
                .map_err(|e| EditError::Numeric(format!("loss evaluation failed: {e}")))?;
        }
        Ok(loss / prompts.len() as f64)
    };

    // Adam with decoupled weight decay 0, best-iterate selection: every
    // produced iterate is evaluated and the lowest-loss one wins, so the
    // best-so-far trajectory is monotone non-increasing.
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut delta: DVector<f64> = DVector::zeros(d);
    let mut m: DVector<f64> = DVector::zeros(d);
    let mut v: DVector<f64> = DVector::zeros(d);
    let initial_loss = mean_loss(&delta)?;
    let mut best = (initial_loss, delta.clone());
    let mut improved = false;

    for step in 1..=cfg.steps {
        let (_, grad) = mean_loss_and_grad(&delta)?;
        for i in 0..d {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - beta1.powi(step as i32));
            let v_hat = v[i] / (1.0 - beta2.powi(step as i32));
            delta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + eps);
        }
        let loss = mean_loss(&delta)?;
        if loss < best.0 {
            best = (loss, delta.clone());
            improved = true;
        }
    }
    if !improved {
        return Err(EditError::Optimization(format!(
            "rejection loss never improved over {initial_loss:.6}"
        )));
    }

    Ok(&forget.h + best.1)
}

//! Concept probing: characteristic MLP activations and hidden states.
//!
//! A probe fills a set of carrier sentences with the concept word, runs
//! one forward pass per sentence, and reads the model at the final token
//! of the word's span. For the forget concept we keep the mean
//! post-activation MLP key `k`, the mean layer hidden state `h`, and the
//! MLP output `v = W_down k`; for a redirection target only `h` matters.

use nalgebra::DVector;

use rocr_model::forward::{forward, CaptureSpec};
use rocr_model::tokenizer::Tokenizer;
use rocr_model::ModelBundle;

use crate::error::{EditError, Result};
use crate::linalg::tensor_matrix;

/// Carrier sentences, each containing the placeholder `{w}` exactly once.
#[derive(Debug, Clone)]
pub struct ProbeTemplateSet {
    sentences: Vec<String>,
}

impl ProbeTemplateSet {
    pub fn new(sentences: Vec<String>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(EditError::Probe("template set is empty".into()));
        }
        for s in &sentences {
            if s.matches("{w}").count() != 1 {
                return Err(EditError::Probe(format!(
                    "template must contain `{{w}}` exactly once: `{s}`"
                )));
            }
        }
        Ok(ProbeTemplateSet { sentences })
    }

    /// One template per non-blank line.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EditError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_text(&text)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn fill(&self, word: &str) -> Vec<String> {
        self.sentences
            .iter()
            .map(|s| s.replace("{w}", word))
            .collect()
    }
}

/// Per-layer probe results for one concept word.
#[derive(Debug, Clone)]
pub struct ConceptStats {
    pub word: String,
    pub layer: usize,
    /// Mean post-activation MLP key; collected for forget concepts only.
    pub k: Option<DVector<f64>>,
    /// Mean layer hidden state at the subject position.
    pub h: DVector<f64>,
    /// Original MLP output for the mean key; forget concepts only.
    pub v: Option<DVector<f64>>,
    pub n_samples: usize,
}

/// Index of the final token of the last occurrence of `word`'s token span.
pub fn locate_subject_token(ids: &[u32], word: &str, tokenizer: &Tokenizer) -> Result<usize> {
    let span = tokenizer
        .encode(word)
        .map_err(|e| EditError::Probe(format!("word `{word}` does not tokenize: {e}")))?;
    if span.is_empty() {
        return Err(EditError::Probe(format!("word `{word}` yields no tokens")));
    }
    if span.len() > ids.len() {
        return Err(EditError::Probe(format!("word `{word}` not found in input")));
    }
    let mut found = None;
    for start in 0..=ids.len() - span.len() {
        if ids[start..start + span.len()] == span[..] {
            found = Some(start + span.len() - 1);
        }
    }
    found.ok_or_else(|| EditError::Probe(format!("word `{word}` not found in input")))
}

struct ProbePass {
    key: Vec<f64>,
    hidden: Vec<f64>,
}

fn probe_once(
    bundle: &ModelBundle,
    sentence: &str,
    word: &str,
    layer: usize,
    use_template: bool,
) -> Result<ProbePass> {
    let text = if use_template {
        bundle.apply_template(sentence)
    } else {
        sentence.to_string()
    };
    let ids = bundle
        .encode(&text)
        .map_err(|e| EditError::Probe(format!("probe sentence does not tokenize: {e}")))?;
    let pos = locate_subject_token(&ids, word, &bundle.tokenizer)?;
    let capture = CaptureSpec {
        mlp_key: true,
        hidden: true,
        ..CaptureSpec::none()
    };
    let trace = forward(bundle, &ids, capture)?;
    Ok(ProbePass {
        key: trace.mlp_key_at(layer, pos)?.to_vec(),
        hidden: trace.hidden_at(layer, pos)?.to_vec(),
    })
}

fn check_layer(bundle: &ModelBundle, layer: usize) -> Result<()> {
    if layer >= bundle.config.n_layers {
        return Err(EditError::Layer {
            layer,
            max: bundle.config.n_layers,
        });
    }
    Ok(())
}

/// Collect the characteristic activation of a forget concept: mean key,
/// mean hidden state, and the MLP output of the mean key. Any template
/// that fails to contain the word is an error, never skipped.
pub fn collect_activation_key(
    bundle: &ModelBundle,
    templates: &ProbeTemplateSet,
    word: &str,
    layer: usize,
    use_template: bool,
) -> Result<ConceptStats> {
    check_layer(bundle, layer)?;
    let cfg = &bundle.config;
    let mut key_sum = vec![0.0f64; cfg.d_mlp];
    let mut hidden_sum = vec![0.0f64; cfg.d_model];
    let sentences = templates.fill(word);
    for s in &sentences {
        let pass = probe_once(bundle, s, word, layer, use_template)?;
        for (a, b) in key_sum.iter_mut().zip(&pass.key) {
            *a += b;
        }
        for (a, b) in hidden_sum.iter_mut().zip(&pass.hidden) {
            *a += b;
        }
    }
    let n = sentences.len() as f64;
    let k = DVector::from_vec(key_sum.into_iter().map(|v| v / n).collect::<Vec<_>>());
    let h = DVector::from_vec(hidden_sum.into_iter().map(|v| v / n).collect::<Vec<_>>());
    if k.norm() == 0.0 {
        return Err(EditError::Probe(format!(
            "characteristic activation for `{word}` at layer {layer} is identically zero"
        )));
    }
    let w_down = tensor_matrix(bundle.tensor(&cfg.down_proj_name(layer))?);
    let v = &w_down * &k;
    Ok(ConceptStats {
        word: word.to_string(),
        layer,
        k: Some(k),
        h,
        v: Some(v),
        n_samples: sentences.len(),
    })
}

/// Collect the mean hidden state of a redirection-target concept.
pub fn collect_hidden_target(
    bundle: &ModelBundle,
    templates: &ProbeTemplateSet,
    word: &str,
    layer: usize,
    use_template: bool,
) -> Result<ConceptStats> {
    check_layer(bundle, layer)?;
    let mut hidden_sum = vec![0.0f64; bundle.config.d_model];
    let sentences = templates.fill(word);
    for s in &sentences {
        let pass = probe_once(bundle, s, word, layer, use_template)?;
        for (a, b) in hidden_sum.iter_mut().zip(&pass.hidden) {
            *a += b;
        }
    }
    let n = sentences.len() as f64;
    let h = DVector::from_vec(hidden_sum.into_iter().map(|v| v / n).collect::<Vec<_>>());
    Ok(ConceptStats {
        word: word.to_string(),
        layer,
        k: None,
        h,
        v: None,
        n_samples: sentences.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn word_tokenizer(words: &[&str]) -> Tokenizer {
        let vocab: HashMap<String, u32> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), i as u32))
            .collect();
        Tokenizer::word(vocab).unwrap()
    }

    #[test]
    fn locate_final_token_of_span() {
        let t = word_tokenizer(&["Stephen", "King", "is"]);
        let ids = t.encode("Stephen King is").unwrap();
        assert_eq!(locate_subject_token(&ids, "Stephen King", &t).unwrap(), 1);
    }

    #[test]
    fn locate_last_occurrence() {
        let t = word_tokenizer(&["a", "b"]);
        let ids = t.encode("a b a b").unwrap();
        assert_eq!(locate_subject_token(&ids, "a b", &t).unwrap(), 3);
        assert_eq!(locate_subject_token(&ids, "a", &t).unwrap(), 2);
    }

    #[test]
    fn locate_missing_word_errors() {
        let t = word_tokenizer(&["a", "b", "c"]);
        let ids = t.encode("a b").unwrap();
        assert!(matches!(
            locate_subject_token(&ids, "c", &t),
            Err(EditError::Probe(_))
        ));
    }

    #[test]
    fn templates_validate_placeholder() {
        assert!(ProbeTemplateSet::new(vec!["no placeholder".into()]).is_err());
        assert!(ProbeTemplateSet::new(vec!["{w} and {w}".into()]).is_err());
        assert!(ProbeTemplateSet::new(vec![]).is_err());
        let ok = ProbeTemplateSet::from_text("Tell me about {w} .\n\nI like {w} .\n").unwrap();
        assert_eq!(ok.len(), 2);
    }
}

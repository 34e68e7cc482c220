//! End-to-end redirection on the planted-fact model: probe, project,
//! solve, apply, and verify recall moved to the target concept while
//! retained knowledge stays put.

use std::collections::BTreeMap;

use rocr_edit::pipeline::projectors_from_files;
use rocr_edit::{
    accumulate_covariance, apply_update, closed_form_update, collect_activation_key,
    collect_hidden_target, redirection_vector, run_edit, spectral_null_projector,
    CovarianceFile, EditOptions, ProbeTemplateSet, RejectOptConfig, Variant,
};
use rocr_fixtures::{facts, toyfact, CORPUS_TOYFACT, REJECT_PROMPTS, TEMPLATES};
use rocr_model::forward::{forward, CaptureSpec};
use rocr_model::{softmax, ModelBundle};

fn answer_probability(bundle: &ModelBundle, prompt: &str, answer: &str) -> f64 {
    let mut ids = bundle.encode(prompt).unwrap();
    let start = ids.len();
    ids.extend(bundle.encode(answer).unwrap());
    let trace = forward(bundle, &ids, CaptureSpec::none()).unwrap();
    (start..ids.len())
        .map(|t| softmax(&trace.logits[t - 1])[ids[t] as usize])
        .product()
}

fn build_projectors(
    bundle: &ModelBundle,
    layers: &[usize],
    threshold: f64,
) -> BTreeMap<usize, rocr_edit::NullProjector> {
    let files: BTreeMap<usize, CovarianceFile> = layers
        .iter()
        .map(|&l| {
            let stats = accumulate_covariance(bundle, CORPUS_TOYFACT, l, 100_000).unwrap();
            (
                l,
                CovarianceFile {
                    stats,
                    corpus_digest: "test".into(),
                },
            )
        })
        .collect();
    projectors_from_files(&files, threshold).unwrap()
}

fn semantic_options(layers: Vec<usize>) -> EditOptions {
    EditOptions {
        forget_word: facts::FORGET.into(),
        variant: Variant::Semantic {
            target_word: facts::TARGET.into(),
        },
        layers,
        templates: ProbeTemplateSet::from_text(TEMPLATES).unwrap(),
        threshold: 1e-2,
        ridge_weight: 1.0,
        seed: 0,
        reprobe: true,
        use_template: true,
    }
}

#[test]
fn semantic_redirect_moves_recall_and_preserves_retain() {
    let mut bundle = toyfact();
    let forget_query = "What is the capital of alpha ?";
    let retain_query = "What is the capital of gamma ?";

    let p_forget_before = answer_probability(&bundle, forget_query, facts::FORGET_FACT);
    let p_retain_before = answer_probability(&bundle, retain_query, facts::RETAIN_FACT);
    assert!(p_forget_before >= 0.9);
    assert!(p_retain_before >= 0.9);

    let projectors = build_projectors(&bundle, &[0], 1e-2);
    let opts = semantic_options(vec![0]);
    let receipt = run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).unwrap();

    assert_eq!(receipt.layers.len(), 1);
    assert!(!receipt.layers[0].no_effect);
    assert!(receipt.layers[0].rank_ratio <= 1e-10);
    assert!(receipt.layers[0].objective_after <= receipt.layers[0].objective_before);
    assert_ne!(receipt.model_digest_before, receipt.model_digest_after);

    let p_forget_after = answer_probability(&bundle, forget_query, facts::FORGET_FACT);
    let p_target_after = answer_probability(&bundle, forget_query, facts::TARGET_FACT);
    let p_retain_after = answer_probability(&bundle, retain_query, facts::RETAIN_FACT);

    assert!(p_forget_after <= 0.1, "forgot fact still at {p_forget_after}");
    assert!(p_target_after >= 0.5, "target fact only at {p_target_after}");
    assert!(
        (p_retain_after - p_retain_before).abs() <= 1e-6,
        "retain moved by {}",
        (p_retain_after - p_retain_before).abs()
    );
}

#[test]
fn multi_layer_edit_with_reprobe_produces_one_record_per_layer() {
    let mut bundle = toyfact();
    let projectors = build_projectors(&bundle, &[0, 1], 1e-2);
    let opts = semantic_options(vec![0, 1]);
    let receipt = run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).unwrap();
    assert_eq!(receipt.layers.len(), 2);
    for rec in &receipt.layers {
        assert!(rec.rank_ratio <= 1e-10 || rec.delta_fnorm == 0.0);
    }
    // The redirect still works with both layers edited.
    let p = answer_probability(&bundle, "What is the capital of alpha ?", facts::TARGET_FACT);
    assert!(p >= 0.5);
}

#[test]
fn probe_once_mode_skips_reprobing_and_still_redirects() {
    let mut bundle = toyfact();
    let projectors = build_projectors(&bundle, &[0, 1], 1e-2);
    let mut opts = semantic_options(vec![0, 1]);
    opts.reprobe = false;
    run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).unwrap();
    let p = answer_probability(&bundle, "What is the capital of alpha ?", facts::TARGET_FACT);
    assert!(p >= 0.5);
}

#[test]
fn mlp_output_shifts_by_delta_times_key_at_subject_position() {
    let bundle = toyfact();
    let templates = ProbeTemplateSet::from_text(TEMPLATES).unwrap();
    let forget = collect_activation_key(&bundle, &templates, facts::FORGET, 0, true).unwrap();
    let target = collect_hidden_target(&bundle, &templates, facts::TARGET, 0, true).unwrap();
    let v_r = redirection_vector(&forget, &target.h).unwrap();

    let cov = accumulate_covariance(&bundle, CORPUS_TOYFACT, 0, 100_000).unwrap();
    let projector = spectral_null_projector(&cov, 1e-2).unwrap();
    let w = rocr_edit::linalg::tensor_matrix(
        bundle.tensor(&bundle.config.down_proj_name(0)).unwrap(),
    );
    let update = closed_form_update(&w, forget.k.as_ref().unwrap(), &v_r, &projector).unwrap();

    let sentence = "Tell me about alpha .";
    let ids = bundle.encode(sentence).unwrap();
    let before = forward(&bundle, &ids, CaptureSpec::all()).unwrap();

    let mut edited = bundle.clone();
    apply_update(&mut edited, &update).unwrap();
    let after = forward(&edited, &ids, CaptureSpec::all()).unwrap();

    let pos = 3; // final token of "alpha"
    let k = before.mlp_key_at(0, pos).unwrap();
    let m0 = before.mlp_out_at(0, pos).unwrap();
    let m1 = after.mlp_out_at(0, pos).unwrap();
    for r in 0..bundle.config.d_model {
        let dk: f64 = (0..bundle.config.d_mlp)
            .map(|c| update.delta[(r, c)] * k[c])
            .sum();
        assert!((m1[r] - m0[r] - dk).abs() <= 1e-5);
    }
}

#[test]
fn applying_then_subtracting_restores_logits() {
    let bundle = toyfact();
    let templates = ProbeTemplateSet::from_text(TEMPLATES).unwrap();
    let forget = collect_activation_key(&bundle, &templates, facts::FORGET, 0, true).unwrap();
    let target = collect_hidden_target(&bundle, &templates, facts::TARGET, 0, true).unwrap();
    let v_r = redirection_vector(&forget, &target.h).unwrap();
    let cov = accumulate_covariance(&bundle, CORPUS_TOYFACT, 0, 100_000).unwrap();
    let projector = spectral_null_projector(&cov, 1e-2).unwrap();
    let w = rocr_edit::linalg::tensor_matrix(
        bundle.tensor(&bundle.config.down_proj_name(0)).unwrap(),
    );
    let update = closed_form_update(&w, forget.k.as_ref().unwrap(), &v_r, &projector).unwrap();

    let ids = bundle.encode("What is the capital of alpha ?").unwrap();
    let original = forward(&bundle, &ids, CaptureSpec::none()).unwrap();

    let mut edited = bundle.clone();
    apply_update(&mut edited, &update).unwrap();
    let mut inverse = update.clone();
    inverse.delta = -inverse.delta;
    apply_update(&mut edited, &inverse).unwrap();
    let restored = forward(&edited, &ids, CaptureSpec::none()).unwrap();

    for (a, b) in original.logits.iter().zip(&restored.logits) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-5);
        }
    }
}

#[test]
fn zero_delta_apply_is_bit_identical() {
    let bundle = toyfact();
    let mut edited = bundle.clone();
    let update = rocr_edit::RankOneUpdate {
        layer: 0,
        delta: nalgebra::DMatrix::zeros(bundle.config.d_model, bundle.config.d_mlp),
        residual: nalgebra::DVector::zeros(bundle.config.d_model),
        key: nalgebra::DVector::from_element(bundle.config.d_mlp, 1.0),
        objective_before: 0.0,
        objective_after: 0.0,
        no_effect: true,
    };
    apply_update(&mut edited, &update).unwrap();
    assert_eq!(bundle.digest(), edited.digest());
    let ids = bundle.encode("Tell me about alpha .").unwrap();
    let a = forward(&bundle, &ids, CaptureSpec::none()).unwrap();
    let b = forward(&edited, &ids, CaptureSpec::none()).unwrap();
    assert_eq!(a.logits, b.logits);
}

#[test]
fn noise_variant_is_seed_deterministic_and_breaks_recall() {
    let projectors = build_projectors(&toyfact(), &[0], 1e-2);
    let run = |seed: u64| {
        let mut bundle = toyfact();
        let opts = EditOptions {
            forget_word: facts::FORGET.into(),
            variant: Variant::Noise,
            layers: vec![0],
            templates: ProbeTemplateSet::from_text(TEMPLATES).unwrap(),
            threshold: 1e-2,
            ridge_weight: 1.0,
            seed,
            reprobe: true,
            use_template: true,
        };
        run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).unwrap();
        bundle
    };
    let a = run(7);
    let b = run(7);
    assert_eq!(a.digest(), b.digest());
    let c = run(8);
    assert_ne!(a.digest(), c.digest());

    // Retained fact still intact under noise redirection.
    let p_retain = answer_probability(&a, "What is the capital of gamma ?", facts::RETAIN_FACT);
    assert!(p_retain >= 0.9);
}

#[test]
fn reject_variant_raises_rejection_probability() {
    let mut bundle = toyfact();
    let projectors = build_projectors(&bundle, &[0], 1e-2);
    let prompts: Vec<String> = REJECT_PROMPTS.lines().map(String::from).collect();
    let opts = EditOptions {
        forget_word: facts::FORGET.into(),
        variant: Variant::Reject(RejectOptConfig {
            reject_text: facts::REJECT_TOKEN.into(),
            steps: 25,
            lr: 0.1,
            prompt_set: prompts,
        }),
        layers: vec![0],
        templates: ProbeTemplateSet::from_text(TEMPLATES).unwrap(),
        threshold: 1e-2,
        ridge_weight: 1.0,
        seed: 0,
        reprobe: true,
        use_template: true,
    };
    let query = "Do you know the capital of alpha ?";
    let p_no_before = answer_probability(&bundle, query, facts::REJECT_TOKEN);
    run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).unwrap();
    let p_no_after = answer_probability(&bundle, query, facts::REJECT_TOKEN);
    assert!(
        p_no_after > p_no_before * 100.0,
        "rejection probability {p_no_before} -> {p_no_after}"
    );
    // Retained knowledge unharmed.
    let p_retain = answer_probability(&bundle, "What is the capital of gamma ?", facts::RETAIN_FACT);
    assert!(p_retain >= 0.9);
}

#[test]
fn semantic_edit_misconfiguration_errors() {
    let mut bundle = toyfact();
    let projectors = build_projectors(&bundle, &[0], 1e-2);
    let mut opts = semantic_options(vec![0]);
    opts.variant = Variant::Semantic {
        target_word: String::new(),
    };
    assert!(run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).is_err());

    let mut opts = semantic_options(vec![]);
    opts.layers = vec![];
    assert!(run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).is_err());

    let opts = semantic_options(vec![9]);
    assert!(run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).is_err());

    // Covariance missing for a requested layer.
    let opts = semantic_options(vec![0, 1]);
    assert!(run_edit(&mut bundle, &opts, &projectors, &BTreeMap::new()).is_err());
}

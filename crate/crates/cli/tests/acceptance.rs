//! Acceptance suite: one test per shipping criterion, each printing a
//! pass line (run with `-- --nocapture` to see them). Tolerances are
//! pinned in the assertions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rocr_edit::oracle::oracle_minimize;
use rocr_edit::pipeline::projectors_from_files;
use rocr_edit::{
    accumulate_covariance, closed_form_update, collect_activation_key, noise_target, run_edit,
    spectral_null_projector, CovarianceFile, CovarianceStats, EditOptions, ProbeTemplateSet,
    RejectOptConfig, Variant,
};
use rocr_eval::{
    aggregate, format_change, layer_sweep, parse_tasks, relative_change, Cell, EvalOptions,
    EvalReport, Split, TaskFormat,
};
use rocr_fixtures::{facts, passthrough8, toy2l, toyfact, CORPUS_TOYFACT, REJECT_PROMPTS, TASKS_TOYFACT, TEMPLATES};
use rocr_model::forward::{forward, CaptureSpec};
use rocr_model::grad::{steered_nll, steered_nll_and_grad};
use rocr_model::{softmax, HiddenOverride, ModelBundle};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(r, c, (0..r * c).map(|_| gaussian(rng)))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| gaussian(rng)))
}

struct Instance {
    w: DMatrix<f64>,
    k_f: DVector<f64>,
    v_r: DVector<f64>,
    keys: DMatrix<f64>,
    projector: rocr_edit::NullProjector,
}

/// d_model = 10, d_mlp = 12, six preserved keys: the covariance is exactly
/// rank six, so a genuine six-dimensional null space exists.
fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = rand_mat(&mut rng, 12, 6);
    let mut cov = CovarianceStats::new(0, 12);
    for c in 0..6 {
        let col: Vec<f64> = keys.column(c).iter().copied().collect();
        cov.add_key(&col).unwrap();
    }
    let projector = spectral_null_projector(&cov, 1e-8).unwrap();
    Instance {
        w: rand_mat(&mut rng, 10, 12),
        k_f: rand_vec(&mut rng, 12),
        v_r: rand_vec(&mut rng, 10),
        keys,
        projector,
    }
}

fn projected_objective(
    w: &DMatrix<f64>,
    cand: &DMatrix<f64>,
    k_f: &DVector<f64>,
    v_r: &DVector<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let dp = cand * p;
    ((w + &dp) * k_f - v_r).norm_squared() + dp.norm_squared()
}

fn answer_probability(bundle: &ModelBundle, prompt: &str, answer: &str) -> f64 {
    let mut ids = bundle.encode(prompt).unwrap();
    let start = ids.len();
    ids.extend(bundle.encode(answer).unwrap());
    let trace = forward(bundle, &ids, CaptureSpec::none()).unwrap();
    (start..ids.len())
        .map(|t| softmax(&trace.logits[t - 1])[ids[t] as usize])
        .product()
}

fn toyfact_projectors(
    bundle: &ModelBundle,
    layers: &[usize],
) -> BTreeMap<usize, rocr_edit::NullProjector> {
    let files: BTreeMap<usize, CovarianceFile> = layers
        .iter()
        .map(|&l| {
            (
                l,
                CovarianceFile {
                    stats: accumulate_covariance(bundle, CORPUS_TOYFACT, l, 100_000).unwrap(),
                    corpus_digest: "acceptance".into(),
                },
            )
        })
        .collect();
    projectors_from_files(&files, 1e-2).unwrap()
}

fn semantic_opts(forget: &str, layers: Vec<usize>) -> EditOptions {
    EditOptions {
        forget_word: forget.into(),
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
fn acceptance_01_closed_form_optimality() {
    let start = std::time::Instant::now();
    for seed in 0..50u64 {
        let inst = instance(seed);
        let p = inst.projector.matrix();
        let up = closed_form_update(&inst.w, &inst.k_f, &inst.v_r, &inst.projector).unwrap();
        let oracle = oracle_minimize(&inst.w, &inst.k_f, &inst.v_r, p).unwrap();
        let f_closed = projected_objective(&inst.w, &up.delta, &inst.k_f, &inst.v_r, p);
        let f_oracle = projected_objective(&inst.w, &oracle, &inst.k_f, &inst.v_r, p);
        let rel = (f_closed - f_oracle).abs() / f_oracle.abs().max(1e-12);
        assert!(rel <= 1e-6, "seed {seed}: relative gap {rel:.3e}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.2}s");
    println!("acceptance 1 (closed-form optimality vs oracle, 50 instances, {elapsed:.2}s): PASS");
}

#[test]
fn acceptance_02_exact_preservation() {
    for seed in 0..50u64 {
        let inst = instance(seed);
        let up = closed_form_update(&inst.w, &inst.k_f, &inst.v_r, &inst.projector).unwrap();
        let dk = &up.delta * &inst.keys;
        assert!(
            dk.norm() <= 1e-8 * up.delta.norm() * inst.keys.norm(),
            "seed {seed}: ||Delta K0||_F = {:.3e}",
            dk.norm()
        );
    }
    println!("acceptance 2 (exact preservation of K0): PASS");
}

#[test]
fn acceptance_03_rank_one() {
    for seed in 0..50u64 {
        let inst = instance(seed);
        let up = closed_form_update(&inst.w, &inst.k_f, &inst.v_r, &inst.projector).unwrap();
        assert!(
            up.delta.norm() == 0.0 || up.rank_ratio() <= 1e-10,
            "seed {seed}: sigma2/sigma1 = {:.3e}",
            up.rank_ratio()
        );
    }
    println!("acceptance 3 (rank-one updates): PASS");
}

#[test]
fn acceptance_04_projector_suite() {
    for seed in 0..20u64 {
        let inst = instance(seed);
        let p = inst.projector.matrix();
        assert!((p * p - p).norm() <= 1e-9);
        assert!((p - p.transpose()).norm() <= 1e-10);
        let pk = p * &inst.keys;
        assert!(pk.norm() <= 1e-8 * inst.keys.norm());
    }
    let zero = CovarianceStats::new(0, 7);
    let p = spectral_null_projector(&zero, 1e-2).unwrap();
    assert_eq!(p.matrix(), &DMatrix::identity(7, 7));
    println!("acceptance 4 (projector idempotent/symmetric/annihilating; zero cov -> identity): PASS");
}

#[test]
fn acceptance_05_end_to_end_planted_fact_redirection() {
    let start = std::time::Instant::now();
    let mut bundle = toyfact();
    let forget_query = "What is the capital of alpha ?";
    let retain_query = "What is the capital of gamma ?";

    let p_forget_before = answer_probability(&bundle, forget_query, facts::FORGET_FACT);
    let p_retain_before = answer_probability(&bundle, retain_query, facts::RETAIN_FACT);
    assert!(p_forget_before >= 0.9, "baseline {p_forget_before}");

    let projectors = toyfact_projectors(&bundle, &[0]);
    run_edit(
        &mut bundle,
        &semantic_opts(facts::FORGET, vec![0]),
        &projectors,
        &BTreeMap::new(),
    )
    .unwrap();

    let p_forget_after = answer_probability(&bundle, forget_query, facts::FORGET_FACT);
    let p_target_after = answer_probability(&bundle, forget_query, facts::TARGET_FACT);
    let p_retain_after = answer_probability(&bundle, retain_query, facts::RETAIN_FACT);
    assert!(p_forget_after <= 0.1, "forget fact still at {p_forget_after}");
    assert!(p_target_after >= 0.5, "target fact only at {p_target_after}");
    assert!(
        (p_retain_after - p_retain_before).abs() <= 1e-6,
        "retain moved by {:.3e}",
        (p_retain_after - p_retain_before).abs()
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 2.0, "took {elapsed:.2}s");
    println!(
        "acceptance 5 (planted-fact redirection: {:.4} -> {:.2e}, target {:.4}, retain drift {:.1e}, {elapsed:.2}s): PASS",
        p_forget_before,
        p_forget_after,
        p_target_after,
        (p_retain_after - p_retain_before).abs()
    );
}

#[test]
fn acceptance_06_metric_formula_on_published_numbers() {
    let cell = |split, format, mean_pct| Cell {
        split,
        format,
        mean_pct,
        n_tasks: 1,
    };
    let before = EvalReport::from_cells(vec![
        cell(Split::Forget, TaskFormat::QA, 46.06),
        cell(Split::Retain, TaskFormat::FB, 80.79),
    ]);
    let after = EvalReport::from_cells(vec![
        cell(Split::Forget, TaskFormat::QA, 13.14),
        cell(Split::Retain, TaskFormat::FB, 74.47),
    ]);
    let changes = relative_change(&before, &after).unwrap();
    assert_eq!(format_change(&changes[0]), "-71.47%");
    assert_eq!(format_change(&changes[1]), "-7.82%");
    println!("acceptance 6 (relative-change formula reproduces -71.47% and -7.82%): PASS");
}

#[test]
fn acceptance_07_noise_variant_statistics() {
    let bundle = toyfact();
    let templates = ProbeTemplateSet::from_text(TEMPLATES).unwrap();
    let h_f = collect_activation_key(&bundle, &templates, facts::FORGET, 0, true)
        .unwrap()
        .h;
    let mut cos_sum = 0.0;
    for seed in 0..1000u64 {
        let h_t = noise_target(&h_f, seed).unwrap();
        assert!((h_t.norm() - h_f.norm()).abs() <= 1e-9, "seed {seed}");
        cos_sum += h_f.dot(&h_t) / (h_f.norm() * h_t.norm());
    }
    let mean_cos = cos_sum / 1000.0;
    assert!((-0.1..=0.1).contains(&mean_cos), "mean cosine {mean_cos:.4}");
    println!("acceptance 7 (noise norm exact, 1000-seed mean cosine {mean_cos:+.4}): PASS");
}

#[test]
fn acceptance_08_reject_variant_improves_and_gradients_check() {
    let bundle = toyfact();
    let templates = ProbeTemplateSet::from_text(TEMPLATES).unwrap();
    let forget = collect_activation_key(&bundle, &templates, facts::FORGET, 0, true).unwrap();
    let cfg = RejectOptConfig {
        reject_text: facts::REJECT_TOKEN.into(),
        steps: 25,
        lr: 0.1,
        prompt_set: REJECT_PROMPTS.lines().map(String::from).collect(),
    };

    // Mean rejection NLL with the subject representation steered to `h`.
    let mean_loss = |h: &DVector<f64>| -> f64 {
        let mut total = 0.0;
        let prompts: Vec<String> = cfg
            .prompt_set
            .iter()
            .map(|p| p.replace("{w}", facts::FORGET))
            .collect();
        for p in &prompts {
            let mut ids = bundle.encode(p).unwrap();
            let start = ids.len();
            ids.extend(bundle.encode(&cfg.reject_text).unwrap());
            let span = bundle.encode(facts::FORGET).unwrap();
            let pos = (0..start).rev().find(|&i| ids[i] == span[0]).unwrap();
            let steer = HiddenOverride {
                layer: 0,
                position: pos,
                hidden: h.iter().copied().collect(),
            };
            total += steered_nll(&bundle, &ids, start, &steer).unwrap();
        }
        total / prompts.len() as f64
    };

    let baseline_loss = mean_loss(&forget.h);
    let h_t = rocr_edit::reject_target(&bundle, &forget, &cfg, true).unwrap();
    let best_loss = mean_loss(&h_t);
    assert!(
        best_loss < baseline_loss,
        "best-iterate loss {best_loss:.4} not below {baseline_loss:.4}"
    );

    // Analytic gradient vs central finite differences (d_model = 24).
    let mut ids = bundle.encode("Do you know alpha ?").unwrap();
    let answer_start = ids.len();
    ids.extend(bundle.encode(facts::REJECT_TOKEN).unwrap());
    let d = bundle.config.d_model;
    let hidden: Vec<f64> = (0..d).map(|i| 0.2 * ((i as f64) * 0.9).cos()).collect();
    let steer = HiddenOverride {
        layer: 0,
        position: 3,
        hidden,
    };
    let (_, grad) = steered_nll_and_grad(&bundle, &ids, answer_start, &steer).unwrap();
    let step = 1e-3;
    let mut fd = vec![0.0; d];
    for (c, slot) in fd.iter_mut().enumerate() {
        let mut plus = steer.clone();
        plus.hidden[c] += step;
        let mut minus = steer.clone();
        minus.hidden[c] -= step;
        *slot = (steered_nll(&bundle, &ids, answer_start, &plus).unwrap()
            - steered_nll(&bundle, &ids, answer_start, &minus).unwrap())
            / (2.0 * step);
    }
    let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let diff: f64 = grad
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(diff <= 1e-4 * gnorm, "gradient mismatch {diff:.3e} vs |g| {gnorm:.3e}");
    println!(
        "acceptance 8 (reject loss {baseline_loss:.3} -> {best_loss:.3}; grad-FD rel {:.1e}): PASS",
        diff / gnorm
    );
}

#[test]
fn acceptance_09_forward_correctness_and_zero_delta_invariance() {
    // Residual identity on every fixture.
    let cases: Vec<(ModelBundle, Vec<u32>)> = vec![
        {
            let b = toy2l();
            let ids = b.encode("acceptance sweep").unwrap();
            (b, ids)
        },
        {
            let b = toyfact();
            let ids = b.encode("What is the capital of alpha ?").unwrap();
            (b, ids)
        },
        (passthrough8(), vec![1, 4, 7]),
    ];
    for (bundle, ids) in &cases {
        let trace = forward(bundle, ids, CaptureSpec::all()).unwrap();
        for l in 0..bundle.config.n_layers {
            for i in 0..ids.len() {
                let h = trace.hidden_at(l, i).unwrap();
                let parts: Vec<f64> = trace
                    .resid_in_at(l, i)
                    .unwrap()
                    .iter()
                    .zip(trace.attn_out_at(l, i).unwrap())
                    .zip(trace.mlp_out_at(l, i).unwrap())
                    .map(|((a, b), c)| a + b + c)
                    .collect();
                let num: f64 = h
                    .iter()
                    .zip(&parts)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = 1.0 + h.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(num <= 1e-5 * scale);
            }
        }
    }

    // A no-effect edit leaves every task probability bit-identical.
    let mut bundle = toyfact();
    let tasks = parse_tasks(TASKS_TOYFACT).unwrap();
    let baseline = aggregate(&bundle, &tasks, EvalOptions::default()).unwrap();
    let projectors = toyfact_projectors(&bundle, &[0]);
    let receipt = run_edit(
        &mut bundle,
        &semantic_opts(facts::RETAIN, vec![0]),
        &projectors,
        &BTreeMap::new(),
    )
    .unwrap();
    assert!(receipt.layers[0].no_effect);
    let after = aggregate(&bundle, &tasks, EvalOptions::default()).unwrap();
    for (a, b) in baseline.tasks.iter().zip(&after.tasks) {
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
    }
    println!("acceptance 9 (residual identity on all fixtures; zero-delta edit bit-identical): PASS");
}

#[test]
fn acceptance_10_layer_sweep_shape() {
    let bundle = toyfact();
    let tasks = parse_tasks(TASKS_TOYFACT).unwrap();
    let projectors = toyfact_projectors(&bundle, &[0, 1]);
    let sweep = layer_sweep(
        &bundle,
        &semantic_opts(facts::FORGET, vec![0]),
        &[0, 1],
        &projectors,
        &tasks,
        EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(sweep.rows.len(), 2);
    for row in &sweep.rows {
        let cells = row.cells.as_ref().expect("cells populated");
        assert_eq!(cells.len(), 8, "layer {} row incomplete", row.layer);
        assert!(row.error.is_none());
    }
    println!("acceptance 10 (layer sweep emits one complete row per layer): PASS");
}

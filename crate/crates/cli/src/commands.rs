//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rocr_edit::{accumulate_covariance, run_edit, write_covariance};
use rocr_eval::{
    aggregate, format_change, layer_sweep, read_tasks, relative_change, EvalOptions, EvalReport,
};
use rocr_model::digest::digest_hex;
use rocr_model::{load_model, save_model, ModelBundle};

use crate::args::{CompareArgs, CovarianceArgs, EditArgs, EvalArgs, FixturesArgs, SweepArgs};
use crate::editcfg;
use crate::error::{CliError, Result};

/// Resolve a model directory, trying $ROCR_MODEL_ROOT for relative paths
/// that do not exist as given.
pub fn resolve_model_dir(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("ROCR_MODEL_ROOT") {
        Some(root) => {
            let joined = PathBuf::from(root).join(path);
            if joined.exists() {
                joined
            } else {
                path.to_path_buf()
            }
        }
        None => path.to_path_buf(),
    }
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    Ok(load_model(&resolve_model_dir(path))?)
}

pub fn covariance(args: &CovarianceArgs) -> Result<()> {
    if args.layers.is_empty() {
        return Err(CliError::Usage("--layers is required".into()));
    }
    let bundle = load_bundle(&args.model)?;
    let corpus = std::fs::read_to_string(&args.corpus).map_err(|e| CliError::Io {
        path: args.corpus.display().to_string(),
        source: e,
    })?;
    let corpus_digest = format!("fnv1a64:{}", digest_hex(corpus.as_bytes()));
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    for &layer in &args.layers {
        let stats = accumulate_covariance(&bundle, &corpus, layer, args.max_keys)?;
        let path = args.out.join(format!("layer_{layer}.cov"));
        write_covariance(&path, &stats, &corpus_digest)?;
        let spectrum = stats.spectrum();
        let max_eig = spectrum.first().copied().unwrap_or(0.0);
        let cutoff = rocr_edit::DEFAULT_REL_THRESHOLD * max_eig;
        let preserved = spectrum.iter().filter(|&&l| l > cutoff).count();
        let trace: f64 = spectrum.iter().sum();
        println!(
            "layer {layer}: n_keys={} d_mlp={} trace={trace:.4e} max_eig={max_eig:.4e} \
             preserved_dims={preserved} null_dims={} -> {}",
            stats.n_keys,
            stats.d_mlp(),
            stats.d_mlp() - preserved,
            path.display()
        );
    }
    Ok(())
}

pub fn edit(args: &EditArgs) -> Result<()> {
    let resolved = editcfg::resolve(&args.flags, None)?;
    let mut bundle = load_bundle(&args.model)?;
    let receipt = run_edit(
        &mut bundle,
        &resolved.opts,
        &resolved.projectors,
        &resolved.covariance_digests,
    )?;
    save_model(&bundle, &args.out)?;
    let receipt_path = args.out.join("receipt.json");
    receipt.write(&receipt_path)?;
    println!(
        "edited `{}` ({} -> {}) at layers {:?} in {:.1} ms",
        receipt.forget_word,
        receipt.variant,
        receipt.target_word.as_deref().unwrap_or("-"),
        resolved.opts.layers,
        receipt.total_wall_ms
    );
    for rec in &receipt.layers {
        println!(
            "  layer {}: |delta|_F={:.4e} rank_ratio={:.1e} null_dim={} objective {:.4e} -> {:.4e}{}",
            rec.layer,
            rec.delta_fnorm,
            rec.rank_ratio,
            rec.null_dim,
            rec.objective_before,
            rec.objective_after,
            if rec.no_effect { "  [no effect: key in preserved span]" } else { "" }
        );
    }
    println!("model -> {}", args.out.display());
    println!("receipt -> {}", receipt_path.display());
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:<8} {:<4} {:>10} {:>8}", "split", "fmt", "mean_pct", "n");
    for cell in &report.cells {
        println!(
            "{:<8} {:<4} {:>10.4} {:>8}",
            cell.split.to_string(),
            cell.format.to_string(),
            cell.mean_pct,
            cell.n_tasks
        );
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let bundle = load_bundle(&args.model)?;
    let tasks = read_tasks(&args.tasks)?;
    let opts = EvalOptions {
        use_template: !args.no_template,
    };
    let report = aggregate(&bundle, &tasks, opts)?;
    report.write(&args.out)?;
    print_report(&report);
    println!("report -> {}", args.out.display());
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let before = EvalReport::read(&args.before)?;
    let after = EvalReport::read(&args.after)?;
    let changes = relative_change(&before, &after)?;
    println!(
        "{:<8} {:<4} {:>10} {:>10} {:>10}",
        "split", "fmt", "before", "after", "change"
    );
    for c in &changes {
        println!(
            "{:<8} {:<4} {:>10.2} {:>10.2} {:>10}",
            c.split.to_string(),
            c.format.to_string(),
            c.before,
            c.after,
            format_change(c)
        );
    }
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&changes).unwrap()).map_err(|e| {
            CliError::Io {
                path: out.display().to_string(),
                source: e,
            }
        })?;
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    if args.sweep_layers.is_empty() {
        return Err(CliError::Usage("--sweep-layers is required".into()));
    }
    let bundle = load_bundle(&args.model)?;
    let tasks = read_tasks(&args.tasks)?;
    // Resolve per-layer statistics leniently: layers without usable
    // covariance files still get a row, carrying the error.
    let mut projectors = BTreeMap::new();
    let mut base: Option<editcfg::ResolvedEdit> = None;
    let mut load_errors: BTreeMap<usize, String> = BTreeMap::new();
    for &layer in &args.sweep_layers {
        match editcfg::resolve(&args.flags, Some(vec![layer])) {
            Ok(resolved) => {
                projectors.extend(resolved.projectors.clone());
                if base.is_none() {
                    base = Some(resolved);
                }
            }
            Err(CliError::Usage(msg)) => return Err(CliError::Usage(msg)),
            Err(other) => {
                load_errors.insert(layer, other.to_string());
            }
        }
    }
    let base = base.ok_or_else(|| {
        CliError::Usage("no sweep layer had usable covariance statistics".into())
    })?;
    let eval_opts = EvalOptions {
        use_template: !args.no_template,
    };
    let mut sweep_report = layer_sweep(
        &bundle,
        &base.opts,
        &args.sweep_layers,
        &projectors,
        &tasks,
        eval_opts,
    )?;
    for row in &mut sweep_report.rows {
        if let Some(msg) = load_errors.get(&row.layer) {
            row.error = Some(msg.clone());
            row.cells = None;
        }
    }

    for row in &sweep_report.rows {
        match (&row.cells, &row.error) {
            (Some(cells), _) => {
                let rendered: Vec<String> = cells
                    .iter()
                    .map(|c| format!("{}/{} {}", c.split, c.format, format_change(c)))
                    .collect();
                println!("layer {:>3}: {}", row.layer, rendered.join("  "));
            }
            (None, Some(err)) => println!("layer {:>3}: error: {err}", row.layer),
            (None, None) => println!("layer {:>3}: no data", row.layer),
        }
    }
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&sweep_report).unwrap()).map_err(
            |e| CliError::Io {
                path: out.display().to_string(),
                source: e,
            },
        )?;
        println!("sweep table -> {}", out.display());
    }
    Ok(())
}

pub fn fixtures(args: &FixturesArgs) -> Result<()> {
    rocr_fixtures::materialize(&args.out)?;
    println!("fixtures -> {}", args.out.display());
    for name in [
        "toyfact/",
        "toy2l/",
        "passthrough8/",
        "templates.txt",
        "reject_prompts.txt",
        "corpus_toyfact.txt",
        "tasks_toyfact.jsonl",
    ] {
        println!("  {name}");
    }
    Ok(())
}

//! The train / evaluate / sanity drivers.

use crate::config::{ExperimentConfig, EvalBlock};
use crate::manifest::RunManifest;
use anyhow::{anyhow, bail, Result};
use bpfc::data::{load_dataset, resolve_data_root, Dataset};
use bpfc::eval::{
    blackbox_suite, restart_study, sanity_checks, whitebox_suite, SanityOpts, SuiteOpts,
};
use bpfc::models::{build_network, load_checkpoint, save_checkpoint, Classifier};
use bpfc::nn::Network;
use bpfc::rng::derive_seed;
use bpfc::train::train;
use std::io::Write;
use std::path::Path;

pub fn cmd_train(config_path: &Path, data_root: Option<&Path>, out_dir: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dataset_id = cfg.dataset_id()?;
    let arch = cfg.arch_id()?;
    let train_cfg = cfg.resolve_train()?;
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir());
    std::fs::create_dir_all(&out)?;
    std::fs::copy(config_path, out.join("config.toml"))?;

    let root = resolve_data_root(data_root.or(cfg.data_root.as_deref()));
    let data: Dataset<f32> = load_dataset(dataset_id, &root, cfg.seed())?;
    eprintln!(
        "loaded {}: {} train / {} val / {} test (val class histogram {:?})",
        dataset_id.name(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.val.class_histogram(data.spec.class_count),
    );

    let mut manifest = RunManifest::new("train", Some(config_path))?;
    let mut model: Network<f32> = build_network(arch, derive_seed(cfg.seed(), "model-init"));
    eprintln!("{} parameters: {}", arch.name(), model.param_count());

    let log_path = out.join("train-log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let t0 = std::time::Instant::now();
    let outcome = train(&mut model, &data.train, &data.val, &train_cfg, |rec| {
        let line = serde_json::to_string(rec).expect("serializable record");
        eprintln!(
            "epoch {:>3}  loss {:.4} (ce {:.4} reg {:.4})  val {:.4}  robust {}  [{:.0}s]",
            rec.epoch,
            rec.train_loss,
            rec.ce_term,
            rec.reg_term,
            rec.val_clean_acc,
            rec.val_robust_acc.map_or("-".into(), |a| format!("{a:.4}")),
            t0.elapsed().as_secs_f64(),
        );
        let _ = writeln!(log, "{line}");
        let _ = log.flush();
    })?;
    if outcome.diverged {
        eprintln!("training diverged; retaining the last finite parameters");
    }

    let cfg_json = serde_json::to_value(&train_cfg)?;
    let best_path = out.join("checkpoint-best.ckpt");
    save_checkpoint(&best_path, &model, cfg_json.clone(), outcome.best_epoch)?;
    manifest.checkpoints.push(best_path);

    // Final-epoch parameters ride along for completeness.
    let mut final_model: Network<f32> = build_network(arch, 0);
    final_model.load_tensors(&outcome.final_tensors)?;
    let final_path = out.join("checkpoint-final.ckpt");
    save_checkpoint(&final_path, &final_model, cfg_json, train_cfg.epochs.saturating_sub(1))?;
    manifest.checkpoints.push(final_path);

    manifest.reports.push(log_path);
    let mpath = manifest.finish(&out)?;
    eprintln!(
        "best epoch {} (windowed robust {:?}); manifest {}",
        outcome.best_epoch,
        outcome.best_val_robust,
        mpath.display()
    );
    if outcome.diverged {
        bail!("training diverged (last finite checkpoint retained)");
    }
    Ok(())
}

pub fn cmd_evaluate(
    config_path: &Path,
    checkpoint: &Path,
    data_root: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dataset_id = cfg.dataset_id()?;
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir());
    std::fs::create_dir_all(&out)?;

    let root = resolve_data_root(data_root.or(cfg.data_root.as_deref()));
    let data: Dataset<f32> = load_dataset(dataset_id, &root, cfg.seed())?;
    let (model, meta) = load_checkpoint::<f32>(checkpoint)?;
    if model.input_shape != dataset_id.input_shape() {
        bail!(
            "checkpoint arch {} does not accept {} inputs",
            meta.arch.name(),
            dataset_id.name()
        );
    }
    let model_id = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());

    let mut manifest = RunManifest::new("evaluate", Some(config_path))?;
    let evals = if cfg.evals.is_empty() {
        vec![EvalBlock {
            suite: "whitebox".into(),
            n_samples: None,
            n_unbounded: None,
            pgd_heavy: None,
            source_checkpoint: None,
            counts: None,
            steps: None,
            attack: None,
            eps_grid: None,
        }]
    } else {
        cfg.evals.clone()
    };

    for (i, block) in evals.iter().enumerate() {
        let seed = derive_seed(cfg.seed(), &format!("eval-{i}-{}", block.suite));
        match block.suite.as_str() {
            "whitebox" => {
                let opts = SuiteOpts {
                    n_bounded: block.n_samples.unwrap_or(1000),
                    n_unbounded: block.n_unbounded.unwrap_or(200),
                    pgd_heavy: block.pgd_heavy.unwrap_or(false),
                    cw_max_iterations: cw_iters(dataset_id),
                    seed,
                    ..SuiteOpts::default()
                };
                let report = whitebox_suite(&model, &model_id, &data.test, &data.spec, &opts);
                write_report(&mut manifest, &out, &format!("whitebox-{i}"), &report)?;
            }
            "blackbox" => {
                let src_path = block
                    .source_checkpoint
                    .as_ref()
                    .ok_or_else(|| anyhow!("blackbox suite needs source_checkpoint"))?;
                let (source, _) = load_checkpoint::<f32>(src_path)?;
                let src_id = src_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "source".into());
                let opts = SuiteOpts {
                    n_bounded: block.n_samples.unwrap_or(1000),
                    seed,
                    ..SuiteOpts::default()
                };
                let report =
                    blackbox_suite(&model, &model_id, &source, &src_id, &data.test, &data.spec, &opts);
                write_report(&mut manifest, &out, &format!("blackbox-{i}"), &report)?;
            }
            "restarts" => {
                let counts = block.counts.clone().unwrap_or_else(|| vec![1, 10, 100]);
                let n = block.n_samples.unwrap_or(1000);
                let sample = data.test.stratified_subset(
                    n,
                    data.spec.class_count,
                    derive_seed(seed, "restart-sample"),
                );
                let mut tm = data.spec.default_threat;
                tm.steps = block.steps.unwrap_or(100);
                tm.random_start = true;
                tm.seed = seed;
                let curve = restart_study(&model, &sample, &tm, &counts, 250);
                let path = out.join(format!("restarts-{i}.jsonl"));
                let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                for (c, acc) in &curve {
                    writeln!(f, "{}", serde_json::json!({"restarts": c, "worst_case_accuracy": acc}))?;
                }
                manifest.reports.push(path);
                eprintln!("restart study: {curve:?}");
            }
            "curves" => {
                let attack = block.attack.clone().unwrap_or_else(|| "fgsm".into());
                let grid = block
                    .eps_grid
                    .clone()
                    .unwrap_or_else(|| (0..=8).map(|k| k as f64 * data.spec.default_threat.eps / 4.0).collect());
                let n = block.n_samples.unwrap_or(1000);
                let sample = data.test.stratified_subset(
                    n,
                    data.spec.class_count,
                    derive_seed(seed, "curve-sample"),
                );
                let points =
                    bpfc::eval::curve_sweep(&model, &sample, &data.spec, &attack, &grid, seed, 250)?;
                let base = out.join(format!("curve-{attack}-{i}"));
                write_curve(&mut manifest, &base, &attack, &points)?;
            }
            other => bail!("unknown suite `{other}` (whitebox, blackbox, restarts, curves)"),
        }
    }
    let mpath = manifest.finish(&out)?;
    eprintln!("manifest {}", mpath.display());
    Ok(())
}

fn cw_iters(dataset: bpfc::data::DatasetId) -> usize {
    // The unbounded-attack protocol uses 200 iterations on CIFAR-10 and
    // 500 on MNIST / F-MNIST.
    match dataset {
        bpfc::data::DatasetId::Cifar10 => 200,
        _ => 500,
    }
}

fn write_report(
    manifest: &mut RunManifest,
    out: &Path,
    stem: &str,
    report: &bpfc::eval::EvalReport,
) -> Result<()> {
    let jsonl = out.join(format!("{stem}.jsonl"));
    report.write_jsonl(&jsonl)?;
    let csv = out.join(format!("{stem}.csv"));
    report.write_summary_csv(&csv)?;
    for r in &report.records {
        eprintln!(
            "  {:>28}  acc {:.4}{}{}",
            r.attack,
            r.accuracy,
            r.fooling_rate.map_or(String::new(), |f| format!("  FR {f:.4}")),
            r.mean_l2.map_or(String::new(), |l| format!("  mean_l2 {l:.3}")),
        );
    }
    manifest.reports.push(jsonl);
    manifest.reports.push(csv);
    Ok(())
}

fn write_curve(
    manifest: &mut RunManifest,
    base: &Path,
    attack: &str,
    points: &[bpfc::eval::CurvePoint],
) -> Result<()> {
    let csv_path = base.with_extension("csv");
    let mut w = csv::WriterBuilder::new().from_path(&csv_path)?;
    w.write_record(["eps", "accuracy", "mean_loss"])?;
    for p in points {
        w.write_record([
            format!("{}", p.eps),
            format!("{}", p.accuracy),
            format!("{}", p.mean_loss),
        ])?;
    }
    w.flush()?;
    let acc: Vec<(f64, f64)> = points.iter().map(|p| (p.eps, p.accuracy)).collect();
    let loss: Vec<(f64, f64)> = points.iter().map(|p| (p.eps, p.mean_loss)).collect();
    let acc_svg = base.with_extension("accuracy.svg");
    bpfc::eval::plot::write_svg(
        &acc_svg,
        &format!("{attack}: accuracy vs eps"),
        "eps",
        "accuracy",
        &[bpfc::eval::plot::Series { name: "accuracy", points: &acc }],
    )?;
    let loss_svg = base.with_extension("loss.svg");
    bpfc::eval::plot::write_svg(
        &loss_svg,
        &format!("{attack}: mean loss vs eps"),
        "eps",
        "mean loss",
        &[bpfc::eval::plot::Series { name: "loss", points: &loss }],
    )?;
    manifest.reports.push(csv_path);
    manifest.reports.push(acc_svg);
    manifest.reports.push(loss_svg);
    Ok(())
}

pub fn cmd_sanity(
    checkpoint: &Path,
    source_checkpoint: &Path,
    dataset: &str,
    data_root: Option<&Path>,
    out_dir: &Path,
    seed: u64,
    n_bounded: usize,
    n_unbounded: usize,
) -> Result<()> {
    let dataset_id = bpfc::data::DatasetId::parse(dataset)?;
    let root = resolve_data_root(data_root);
    let data: Dataset<f32> = load_dataset(dataset_id, &root, seed)?;
    let (model, _) = load_checkpoint::<f32>(checkpoint)?;
    let (source, _) = load_checkpoint::<f32>(source_checkpoint)?;
    let opts = SanityOpts {
        n_bounded,
        n_unbounded,
        cw_max_iterations: cw_iters(dataset_id),
        seed,
        chunk: 250,
    };
    let report = sanity_checks(&model, &source, &data.test, &data.spec, &opts);
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("sanity.jsonl");
    report.write_jsonl(&path)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.details);
    }
    let mut manifest = RunManifest::new("sanity", None)?;
    manifest.reports.push(path);
    manifest.finish(out_dir)?;
    if !report.all_pass() {
        bail!("sanity checks failed");
    }
    Ok(())
}

/// Shared by `attack` and `sanity`: load model + stratified test subset.
pub fn load_model_and_subset(
    checkpoint: &Path,
    dataset: &str,
    data_root: Option<&Path>,
    n: usize,
    seed: u64,
) -> Result<(Network<f32>, bpfc::data::ImageBatch<f32>, bpfc::data::DatasetSpec)> {
    let dataset_id = bpfc::data::DatasetId::parse(dataset)?;
    let root = resolve_data_root(data_root);
    let data: Dataset<f32> = load_dataset(dataset_id, &root, seed)?;
    let (model, _) = load_checkpoint::<f32>(checkpoint)?;
    let subset = if n == 0 || n >= data.test.len() {
        data.test.clone()
    } else {
        data.test
            .stratified_subset(n, data.spec.class_count, derive_seed(seed, "attack-sample"))
    };
    let _ = model.class_count();
    Ok((model, subset, data.spec))
}

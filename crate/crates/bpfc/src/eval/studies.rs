//! Restart studies, sanity checks and accuracy/loss-vs-epsilon curves.

use crate::attacks::{fgsm, ifgsm, pgd, ThreatModel};
use crate::data::{pgd_step_ladder, DatasetSpec, ImageBatch};
use crate::eval::suites::attacked_accuracy;
use crate::float::Float;
use crate::models::Classifier;
use crate::rng::derive_seed;
use crate::train::{eval_clean_accuracy, mean_ce_loss};
use serde::{Deserialize, Serialize};

/// Worst-case PGD accuracy as a function of the restart budget.
///
/// One pass with the maximum restart count; the curve at smaller counts
/// is read off the per-restart prefix (restarts are i.i.d., so a prefix
/// is a valid smaller-budget run).
pub fn restart_study<F: Float>(
    model: &dyn Classifier<F>,
    sample: &ImageBatch<F>,
    tm: &ThreatModel,
    restart_counts: &[usize],
    chunk: usize,
) -> Vec<(usize, f64)> {
    let max_r = restart_counts.iter().copied().max().unwrap_or(1);
    let tm_full = tm.with_restarts(max_r);
    let n = sample.len();
    // Weighted merge of prefix curves across chunks.
    let mut prefix_correct = vec![0usize; max_r];
    let mut at = 0usize;
    while at < n {
        let end = (at + chunk).min(n);
        let part = sample.slice(at..end);
        let out = pgd(model, &part.pixels.view(), &part.labels_vec(), &tm_full);
        for (r, acc) in out.prefix_worst_acc.iter().enumerate() {
            prefix_correct[r] += (acc * part.len() as f64).round() as usize;
        }
        at = end;
    }
    restart_counts
        .iter()
        .map(|&c| (c, prefix_correct[c.min(max_r) - 1] as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub name: String,
    pub pass: bool,
    pub details: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SanityReport {
    pub checks: Vec<CheckVerdict>,
}

impl SanityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write_jsonl(&self, path: &std::path::Path) -> crate::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for c in &self.checks {
            writeln!(f, "{}", serde_json::to_string(c).expect("serializable"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SanityOpts {
    pub n_bounded: usize,
    pub n_unbounded: usize,
    pub cw_max_iterations: usize,
    pub seed: u64,
    pub chunk: usize,
}

impl Default for SanityOpts {
    fn default() -> Self {
        SanityOpts { n_bounded: 1000, n_unbounded: 100, cw_max_iterations: 200, seed: 0, chunk: 250 }
    }
}

/// The five gradient-masking sanity checks:
/// 1. iterative attacks are at least as strong as single-step,
/// 2. white-box at least as strong as black-box transfer from `source`,
/// 3. unbounded attacks reach ~100% fooling,
/// 4. accuracy falls to ~0 at large epsilon,
/// 5. FGSM loss grows monotonically with epsilon.
pub fn sanity_checks<F: Float>(
    model: &dyn Classifier<F>,
    source: &dyn Classifier<F>,
    test: &ImageBatch<F>,
    spec: &DatasetSpec,
    opts: &SanityOpts,
) -> SanityReport {
    let base = spec.default_threat;
    let ladder = pgd_step_ladder(spec.id);
    let eval = test.stratified_subset(
        opts.n_bounded.min(test.len()),
        spec.class_count,
        derive_seed(opts.seed, "sanity-sample"),
    );
    let eval_ub = test.stratified_subset(
        opts.n_unbounded.min(test.len()),
        spec.class_count,
        derive_seed(opts.seed, "sanity-unbounded"),
    );
    let mut checks = Vec::new();

    // 1: iterative vs single step.
    let tm_f = base.with_seed(derive_seed(opts.seed, "sanity-fgsm"));
    let acc_fgsm =
        attacked_accuracy(model, &eval, opts.chunk, |x, y| fgsm(model, x, y, &tm_f));
    let tm_p = base
        .with_steps(ladder[0])
        .with_seed(derive_seed(opts.seed, "sanity-pgd"));
    let mut acc_pgd_correct = 0usize;
    {
        let mut at = 0;
        while at < eval.len() {
            let end = (at + opts.chunk).min(eval.len());
            let part = eval.slice(at..end);
            let out = pgd(model, &part.pixels.view(), &part.labels_vec(), &tm_p);
            acc_pgd_correct += out.worst_correct.iter().filter(|&&c| c).count();
            at = end;
        }
    }
    let acc_pgd = acc_pgd_correct as f64 / eval.len() as f64;
    checks.push(CheckVerdict {
        name: "iterative-stronger-than-single-step".into(),
        pass: acc_pgd <= acc_fgsm,
        details: format!(
            "pgd-{} accuracy {:.4} vs fgsm accuracy {:.4}",
            ladder[0], acc_pgd, acc_fgsm
        ),
        curve: None,
    });

    // 2: white-box vs black-box (FGSM transfer from the source model).
    let tm_bb = base.with_seed(derive_seed(opts.seed, "sanity-bb"));
    let acc_black =
        attacked_accuracy(model, &eval, opts.chunk, |x, y| fgsm(source, x, y, &tm_bb));
    checks.push(CheckVerdict {
        name: "whitebox-stronger-than-blackbox".into(),
        pass: acc_fgsm <= acc_black,
        details: format!("white-box fgsm {acc_fgsm:.4} vs black-box fgsm {acc_black:.4}"),
        curve: None,
    });

    // 3: unbounded attacks reach ~100% fooling.
    let cw_opts = crate::attacks::CwOpts {
        max_iterations: opts.cw_max_iterations,
        ..crate::attacks::CwOpts::default()
    };
    let cw = crate::attacks::cw_l2(model, &eval_ub.pixels.view(), &eval_ub.labels_vec(), &cw_opts);
    checks.push(CheckVerdict {
        name: "unbounded-attack-fools-all".into(),
        pass: cw.fooling_rate() >= 0.99,
        details: format!(
            "C&W fooling rate {:.4} (mean l2 {:.3}) on {} samples",
            cw.fooling_rate(),
            cw.mean_l2_fooled(),
            eval_ub.len()
        ),
        curve: None,
    });

    // 4: accuracy -> 0 as epsilon grows.
    let (grid, eps_zero) = big_eps_grid(spec);
    let mut curve4 = Vec::new();
    for &eps in &grid {
        let tm = base
            .with_eps(eps)
            .with_steps(ladder[0])
            .with_seed(derive_seed(opts.seed, "sanity-eps"));
        let acc = if eps == 0.0 {
            eval_clean_accuracy(model, &eval, opts.chunk)
        } else {
            let mut correct = 0usize;
            let mut at = 0;
            while at < eval.len() {
                let end = (at + opts.chunk).min(eval.len());
                let part = eval.slice(at..end);
                let out = pgd(model, &part.pixels.view(), &part.labels_vec(), &tm);
                correct += out.worst_correct.iter().filter(|&&c| c).count();
                at = end;
            }
            correct as f64 / eval.len() as f64
        };
        curve4.push((eps, acc));
    }
    let acc_at_max = curve4.last().map(|&(_, a)| a).unwrap_or(1.0);
    checks.push(CheckVerdict {
        name: "accuracy-vanishes-at-large-eps".into(),
        pass: acc_at_max <= 0.01,
        details: format!("pgd-{} accuracy {:.4} at eps {:.3}", ladder[0], acc_at_max, eps_zero),
        curve: Some(curve4),
    });

    // 5: FGSM loss monotone in epsilon.
    let loss_grid = fgsm_loss_grid(spec);
    let mut curve5 = Vec::new();
    for &eps in &loss_grid {
        let tm = base.with_eps(eps).with_seed(derive_seed(opts.seed, "sanity-loss"));
        let loss = if eps == 0.0 {
            mean_ce_loss(model, &eval, opts.chunk)
        } else {
            let mut total = 0.0;
            let mut at = 0;
            while at < eval.len() {
                let end = (at + opts.chunk).min(eval.len());
                let part = eval.slice(at..end);
                let adv = fgsm(model, &part.pixels.view(), &part.labels_vec(), &tm);
                let advb = ImageBatch { pixels: adv, labels: part.labels.clone() };
                total += mean_ce_loss(model, &advb, opts.chunk) * part.len() as f64;
                at = end;
            }
            total / eval.len() as f64
        };
        curve5.push((eps, loss));
    }
    let monotone = curve5.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9);
    checks.push(CheckVerdict {
        name: "fgsm-loss-monotone-in-eps".into(),
        pass: monotone,
        details: format!(
            "loss {:.4} -> {:.4} over eps 0..{:.2}",
            curve5.first().map(|p| p.1).unwrap_or(0.0),
            curve5.last().map(|p| p.1).unwrap_or(0.0),
            loss_grid.last().copied().unwrap_or(0.0)
        ),
        curve: Some(curve5),
    });

    SanityReport { checks }
}

fn big_eps_grid(spec: &DatasetSpec) -> (Vec<f64>, f64) {
    match spec.id {
        crate::data::DatasetId::Cifar10 => {
            ((0..=8).map(|i| i as f64 * 8.0 / 255.0).collect(), 64.0 / 255.0)
        }
        _ => ((0..=6).map(|i| i as f64 * 0.1).collect(), 0.6),
    }
}

fn fgsm_loss_grid(spec: &DatasetSpec) -> Vec<f64> {
    match spec.id {
        crate::data::DatasetId::Cifar10 => (0..=8).map(|i| i as f64 * 4.0 / 255.0).collect(),
        _ => (0..=8).map(|i| i as f64 * 0.05).collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eps: f64,
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Accuracy and mean loss of one attack across an epsilon grid.
pub fn curve_sweep<F: Float>(
    model: &dyn Classifier<F>,
    test: &ImageBatch<F>,
    spec: &DatasetSpec,
    attack_id: &str,
    eps_grid: &[f64],
    seed: u64,
    chunk: usize,
) -> crate::Result<Vec<CurvePoint>> {
    let base = spec.default_threat;
    let ladder = pgd_step_ladder(spec.id);
    let mut points = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let tm = base
            .with_eps(eps)
            .with_steps(ladder[0])
            .with_seed(derive_seed(seed, &format!("curve-{attack_id}")));
        let (acc, loss) = if eps == 0.0 {
            (eval_clean_accuracy(model, test, chunk), mean_ce_loss(model, test, chunk))
        } else {
            let mut correct = 0usize;
            let mut loss_total = 0.0;
            let mut at = 0;
            while at < test.len() {
                let end = (at + chunk).min(test.len());
                let part = test.slice(at..end);
                let labels = part.labels_vec();
                let adv = match attack_id {
                    "fgsm" => fgsm(model, &part.pixels.view(), &labels, &tm),
                    "ifgsm" => ifgsm(model, &part.pixels.view(), &labels, &tm),
                    "pgd" => pgd(model, &part.pixels.view(), &labels, &tm).adv,
                    other => {
                        return Err(crate::Error::UnknownAttack(
                            other.to_string(),
                            "fgsm, ifgsm, pgd".to_string(),
                        ))
                    }
                };
                let pred = model.predict(&adv.view());
                correct +=
                    pred.iter().zip(&labels).filter(|(p, y)| **p == **y as usize).count();
                let advb = ImageBatch { pixels: adv, labels: part.labels.clone() };
                loss_total += mean_ce_loss(model, &advb, chunk) * part.len() as f64;
                at = end;
            }
            (correct as f64 / test.len() as f64, loss_total / test.len() as f64)
        };
        points.push(CurvePoint { eps, accuracy: acc, mean_loss: loss });
    }
    Ok(points)
}

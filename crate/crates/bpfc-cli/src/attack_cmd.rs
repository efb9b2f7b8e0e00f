//! Single-attack runner: one attack, one checkpoint, JSON-lines records
//! per batch plus a summary row.

use anyhow::{bail, Result};
use bpfc::attacks::{
    adaptive_attack, cw_l2, deepfool, fgsm, ifgsm, mi_fgsm, pgd, pgd_targeted,
    random_noise_attack, spsa, AdaptiveLossWeights, CwOpts, SpsaOpts, TargetPolicy, ThreatModel,
};
use bpfc::data::{DatasetSpec, ImageBatch};
use bpfc::models::Classifier;
use bpfc::nn::Network;
use std::io::Write;
use std::path::Path;

pub const ATTACK_IDS: &str =
    "fgsm, ifgsm, pgd, pgd-targeted, mifgsm, deepfool, cw, spsa, random, adaptive";

#[allow(clippy::too_many_arguments)]
pub fn cmd_attack(
    model: &Network<f32>,
    subset: &ImageBatch<f32>,
    spec: &DatasetSpec,
    attack: &str,
    mut tm: ThreatModel,
    weights: AdaptiveLossWeights,
    target_policy: Option<&str>,
    noise_samples: usize,
    out: Option<&Path>,
    chunk: usize,
) -> Result<()> {
    if let Some(policy) = target_policy {
        tm.target_policy = match policy {
            "least-likely" => TargetPolicy::LeastLikely,
            "random" => TargetPolicy::RandomTarget,
            other => bail!("unknown target policy `{other}` (least-likely, random)"),
        };
    }
    let mut sink: Box<dyn Write> = match out {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => Box::new(std::io::stdout()),
    };

    let n = subset.len();
    let mut correct = 0usize;
    let mut fooled = 0usize;
    let mut l2_sum = 0.0f64;
    let mut l2_count = 0usize;
    let mut at = 0usize;
    let mut batch_idx = 0usize;
    let t0 = std::time::Instant::now();
    while at < n {
        let end = (at + chunk).min(n);
        let part = subset.slice(at..end);
        let labels = part.labels_vec();
        let x = part.pixels.view();
        let (batch_correct, batch_fooled, batch_l2): (usize, usize, Option<Vec<f64>>) =
            match attack {
                "fgsm" | "ifgsm" | "mifgsm" | "spsa" | "adaptive" => {
                    let adv = match attack {
                        "fgsm" => fgsm(model, &x, &labels, &tm),
                        "ifgsm" => ifgsm(model, &x, &labels, &tm),
                        "mifgsm" => mi_fgsm(model, &x, &labels, &tm, 1.0),
                        "spsa" => spsa(model, &x, &labels, &tm, &SpsaOpts::default()),
                        _ => adaptive_attack(model, &x, &labels, &tm, &weights, &spec.default_quant, true)?,
                    };
                    let pred = model.predict(&adv.view());
                    let c = pred.iter().zip(&labels).filter(|(p, y)| **p == **y as usize).count();
                    (c, labels.len() - c, None)
                }
                "pgd" => {
                    let outp = pgd(model, &x, &labels, &tm);
                    let c = outp.worst_correct.iter().filter(|&&v| v).count();
                    (c, labels.len() - c, None)
                }
                "pgd-targeted" => {
                    if tm.target_policy == TargetPolicy::Untargeted {
                        tm.target_policy = TargetPolicy::LeastLikely;
                    }
                    let outp = pgd_targeted(model, &x, &labels, &tm);
                    let c = (outp.true_label_acc * labels.len() as f64).round() as usize;
                    (c, labels.len() - c, None)
                }
                "deepfool" => {
                    let outp = deepfool(model, &x, 100);
                    let f = outp.fooled.iter().filter(|&&v| v).count();
                    let l2: Vec<f64> = outp
                        .l2
                        .iter()
                        .zip(&outp.fooled)
                        .filter(|(_, &fl)| fl)
                        .map(|(&v, _)| v)
                        .collect();
                    (labels.len() - f, f, Some(l2))
                }
                "cw" => {
                    let outp = cw_l2(model, &x, &labels, &CwOpts::default());
                    let f = outp.fooled.iter().filter(|&&v| v).count();
                    let l2: Vec<f64> = outp
                        .l2
                        .iter()
                        .zip(&outp.fooled)
                        .filter(|(_, &fl)| fl)
                        .map(|(&v, _)| v)
                        .collect();
                    (labels.len() - f, f, Some(l2))
                }
                "random" => {
                    let mask = random_noise_attack(model, &x, &labels, &tm, noise_samples);
                    let c = mask.iter().filter(|&&v| v).count();
                    (c, labels.len() - c, None)
                }
                other => bail!(bpfc::Error::UnknownAttack(other.into(), ATTACK_IDS.into())),
            };
        correct += batch_correct;
        fooled += batch_fooled;
        if let Some(l2) = &batch_l2 {
            l2_sum += l2.iter().sum::<f64>();
            l2_count += l2.len();
        }
        writeln!(
            sink,
            "{}",
            serde_json::json!({
                "batch": batch_idx,
                "n": labels.len(),
                "correct": batch_correct,
                "fooled": batch_fooled,
                "mean_l2": batch_l2.as_ref().map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64),
            })
        )?;
        batch_idx += 1;
        at = end;
    }
    writeln!(
        sink,
        "{}",
        serde_json::json!({
            "summary": attack,
            "n_samples": n,
            "accuracy": correct as f64 / n as f64,
            "fooling_rate": fooled as f64 / n as f64,
            "mean_l2": if l2_count > 0 { Some(l2_sum / l2_count as f64) } else { None },
            "eps": tm.eps,
            "eps_step": tm.eps_step,
            "steps": tm.steps,
            "restarts": tm.restarts,
            "seed": tm.seed,
            "wall_time_s": t0.elapsed().as_secs_f64(),
        })
    )?;
    Ok(())
}

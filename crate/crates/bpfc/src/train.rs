//! Training: feature-consistency regularized training plus the normal /
//! FGSM-AT / PGD-AT baselines, with the step-up lambda schedule, lr
//! decay, early stopping on validation I-FGSM accuracy, and a local
//! smoothness probe.

use crate::attacks::{fgsm, ifgsm, pgd, ThreatModel};
use crate::data::{DatasetId, ImageBatch};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::models::Classifier;
use crate::nn::loss::{cross_entropy, softmax};
use crate::nn::{GradStore, Network, Sgd};
use crate::quant::{quantize_batch, QuantConfig};
use crate::rng::{derive_seed_indexed, substream_indexed};
use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Bpfc,
    Normal,
    FgsmAt,
    PgdAt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNorm {
    L2Squared,
    L1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lambda_initial: f64,
    /// Multiplied into lambda every `lambda_step_every` epochs; 1 keeps
    /// lambda constant.
    pub lambda_step_factor: f64,
    pub lambda_step_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub quant: QuantConfig,
    pub reg_norm: RegNorm,
    /// Width of the early-stopping window at the end of training.
    pub early_stop_window: usize,
    /// Attack used for windowed validation accuracy.
    pub early_stop_attack: ThreatModel,
    /// Validation subset size for the robust-accuracy evaluation.
    pub early_stop_eval_samples: usize,
    /// Threat model for the adversarial-training baselines.
    pub at_threat: Option<ThreatModel>,
    /// Random crop + horizontal flip (CIFAR-10 only), off by default.
    pub augment: bool,
    /// Optional training-set subsample (stratified) for smoke runs.
    pub train_subset: Option<usize>,
    /// Optional validation subsample for the clean-accuracy metric.
    pub val_subset: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    /// Dataset defaults: the standard training recipes.
    pub fn defaults_for(dataset: DatasetId, mode: TrainMode) -> TrainConfig {
        let (epochs, batch_size, learning_rate) = match dataset {
            DatasetId::Cifar10 => (100, 128, 0.1),
            DatasetId::Mnist | DatasetId::FashionMnist => (50, 64, 0.01),
        };
        let (lambda_initial, lambda_step_factor, lambda_step_every) = match dataset {
            DatasetId::Cifar10 => (1.0, 9.0, 25),
            DatasetId::Mnist => (30.0, 1.0, 0),
            DatasetId::FashionMnist => (25.0, 1.0, 0),
        };
        let early_stop_window = match dataset {
            DatasetId::Cifar10 => 20,
            DatasetId::Mnist | DatasetId::FashionMnist => 30,
        };
        let mut early_stop_attack = crate::data::default_threat_model(dataset);
        early_stop_attack.random_start = false;
        early_stop_attack.restarts = 1;
        let at_threat = match mode {
            TrainMode::FgsmAt | TrainMode::PgdAt => {
                let mut t = crate::data::default_threat_model(dataset);
                t.random_start = matches!(mode, TrainMode::PgdAt);
                Some(t)
            }
            _ => None,
        };
        TrainConfig {
            mode,
            lambda_initial,
            lambda_step_factor,
            lambda_step_every,
            epochs,
            batch_size,
            learning_rate,
            lr_decay_factor: 5.0,
            // Decayed three times, at 50% / 75% / 90% of the schedule.
            lr_decay_epochs: vec![epochs / 2, epochs * 3 / 4, epochs * 9 / 10],
            momentum: 0.9,
            weight_decay: 5e-4,
            quant: crate::data::default_quant_config(dataset),
            reg_norm: RegNorm::L2Squared,
            early_stop_window,
            early_stop_attack,
            early_stop_eval_samples: 1000,
            at_threat,
            augment: false,
            train_subset: None,
            val_subset: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_step_factor < 1.0 {
            return Err(Error::InvalidConfig(
                "lambda schedule must be nondecreasing (step factor >= 1)".into(),
            ));
        }
        if self.mode == TrainMode::Bpfc {
            self.quant.validate()?;
        }
        if matches!(self.mode, TrainMode::FgsmAt | TrainMode::PgdAt) && self.at_threat.is_none() {
            return Err(Error::InvalidConfig(
                "adversarial-training modes need a threat model".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// lambda_initial * factor^floor(epoch / every); constant when the step
/// interval is zero.
pub fn lambda_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.lambda_step_every == 0 {
        return cfg.lambda_initial;
    }
    cfg.lambda_initial * cfg.lambda_step_factor.powi((epoch / cfg.lambda_step_every) as i32)
}

pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let decays = cfg.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
    cfg.learning_rate / cfg.lr_decay_factor.powi(decays as i32)
}

/// Per-batch loss components.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub reg: f64,
}

/// The training objective: mean_i [ ce(f(x_i), y_i) + lambda * d(g(x_i),
/// g(q(x_i))) ] with d the squared l2 distance (or l1 under the ablation
/// norm). One fresh quantization draw per call.
pub fn bpfc_loss<F: Float>(
    model: &mut Network<F>,
    x: &ImageBatch<F>,
    lambda: f64,
    quant: &QuantConfig,
    reg_norm: RegNorm,
    noise_seed: u64,
) -> Result<(F, LossParts)> {
    let labels = x.labels_vec();
    let q = quantize_batch(&x.pixels.view(), quant, noise_seed)?;
    let mut rng = substream_indexed(noise_seed, "loss-dropout", 0);
    let (gx, _) = model.forward_train(&x.pixels.view(), &mut rng);
    let (gq, _) = model.forward_train(&q.view(), &mut rng);
    let (ce, _) = cross_entropy(&gx.view(), &labels);
    let reg = reg_value(&gx, &gq, reg_norm);
    let lam = F::of(lambda);
    let total = ce + lam * reg;
    if !total.is_finite() {
        return Err(Error::Diverged { epoch: 0, step: 0 });
    }
    Ok((
        total,
        LossParts {
            total: total.to_f64(),
            ce: ce.to_f64(),
            reg: (lam * reg).to_f64(),
        },
    ))
}

fn reg_value<F: Float>(gx: &Array2<F>, gq: &Array2<F>, norm: RegNorm) -> F {
    let n = F::of(gx.nrows() as f64);
    let gap = gx - gq;
    match norm {
        RegNorm::L2Squared => gap.mapv(|v| v * v).sum() / n,
        RegNorm::L1 => gap.mapv(|v| v.abs()).sum() / n,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub lr: f64,
    pub train_loss: f64,
    pub ce_term: f64,
    pub reg_term: f64,
    pub val_clean_acc: f64,
    /// Present only inside the early-stopping window.
    pub val_robust_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters the returned model carries.
    pub best_epoch: usize,
    pub best_val_robust: Option<f64>,
    /// Parameters of the final epoch (the returned network holds the
    /// best-window parameters).
    pub final_tensors: Vec<(String, Vec<F>, Vec<usize>)>,
    pub diverged: bool,
}

/// Train `model` in place. On return the model holds the best
/// early-stopping-window parameters (ties break toward the earlier
/// epoch); the final-epoch parameters ride along in the outcome.
pub fn train<F: Float>(
    model: &mut Network<F>,
    train_set: &ImageBatch<F>,
    val_set: &ImageBatch<F>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let train_set = match cfg.train_subset {
        Some(n) if n < train_set.len() => {
            train_set.stratified_subset(n, model.class_count, derive_seed_indexed(cfg.seed, "train-subset", 0))
        }
        _ => train_set.clone(),
    };
    let val_clean = match cfg.val_subset {
        Some(n) if n < val_set.len() => {
            val_set.stratified_subset(n, model.class_count, derive_seed_indexed(cfg.seed, "val-subset", 0))
        }
        _ => val_set.clone(),
    };
    // Fixed stratified subset for the windowed robust-accuracy metric.
    let robust_eval = val_set.stratified_subset(
        cfg.early_stop_eval_samples.min(val_set.len()),
        model.class_count,
        derive_seed_indexed(cfg.seed, "early-stop-eval", 0),
    );

    let mut grads = GradStore::zeros_like(model);
    let mut vel = GradStore::zeros_like(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let window_start = cfg.epochs.saturating_sub(cfg.early_stop_window);
    let mut best: Option<(usize, f64, Network<F>)> = None;
    let mut last_finite: Option<Network<F>> = None;
    let mut diverged = false;

    'epochs: for epoch in 0..cfg.epochs {
        let lambda = lambda_at_epoch(cfg, epoch);
        let lr = lr_at_epoch(cfg, epoch);
        let sgd = Sgd { lr, momentum: cfg.momentum, weight_decay: cfg.weight_decay };
        let mut dropout_rng = substream_indexed(cfg.seed, "dropout", epoch as u64);
        let mut augment_rng = substream_indexed(cfg.seed, "augment", epoch as u64);

        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut batches = 0usize;
        let batch_seed = derive_seed_indexed(cfg.seed, "shuffle", epoch as u64);
        for (step, mut batch) in train_set
            .shuffled_batches(cfg.batch_size, batch_seed)
            .into_iter()
            .enumerate()
        {
            if cfg.augment {
                augment_in_place(&mut batch.pixels, &mut augment_rng);
            }
            let noise_seed =
                derive_seed_indexed(cfg.seed, "train-noise", (epoch * 1_000_000 + step) as u64);
            grads.zero();
            let parts = match cfg.mode {
                TrainMode::Bpfc => bpfc_step(model, &batch, lambda, cfg, noise_seed, &mut dropout_rng, &mut grads)?,
                TrainMode::Normal => ce_step(model, &batch, &mut dropout_rng, &mut grads),
                TrainMode::FgsmAt | TrainMode::PgdAt => {
                    let tm = cfg.at_threat.expect("validated").with_seed(noise_seed);
                    let adv = match cfg.mode {
                        TrainMode::FgsmAt => fgsm(model, &batch.pixels.view(), &batch.labels_vec(), &tm),
                        _ => {
                            pgd(model, &batch.pixels.view(), &batch.labels_vec(), &tm).adv
                        }
                    };
                    let adv_batch = ImageBatch { pixels: adv, labels: batch.labels.clone() };
                    ce_step(model, &adv_batch, &mut dropout_rng, &mut grads)
                }
            };
            if !parts.total.is_finite() {
                diverged = true;
                if let Some(prev) = last_finite.take() {
                    *model = prev;
                }
                history.push(EpochRecord {
                    epoch,
                    lambda,
                    lr,
                    train_loss: f64::NAN,
                    ce_term: parts.ce,
                    reg_term: parts.reg,
                    val_clean_acc: f64::NAN,
                    val_robust_acc: None,
                });
                break 'epochs;
            }
            sgd.step(model, &grads, &mut vel);
            sums.0 += parts.total;
            sums.1 += parts.ce;
            sums.2 += parts.reg;
            batches += 1;
        }
        if diverged {
            break;
        }
        last_finite = Some(model.clone());

        let val_clean_acc = eval_clean_accuracy(model, &val_clean, 500);
        let val_robust_acc = if epoch >= window_start {
            let tm = cfg.early_stop_attack.with_seed(derive_seed_indexed(
                cfg.seed,
                "early-stop-attack",
                epoch as u64,
            ));
            Some(eval_robust_accuracy(model, &robust_eval, &tm, 250))
        } else {
            None
        };
        if let Some(acc) = val_robust_acc {
            // Strictly-greater keeps the earlier epoch on ties.
            if best.as_ref().map_or(true, |(_, b, _)| acc > *b) {
                best = Some((epoch, acc, model.clone()));
            }
        }

        let record = EpochRecord {
            epoch,
            lambda,
            lr,
            train_loss: sums.0 / batches.max(1) as f64,
            ce_term: sums.1 / batches.max(1) as f64,
            reg_term: sums.2 / batches.max(1) as f64,
            val_clean_acc,
            val_robust_acc,
        };
        on_epoch(&record);
        history.push(record);
    }

    let final_tensors = model.tensors();
    let (best_epoch, best_val_robust) = match best {
        Some((e, acc, params)) => {
            *model = params;
            (e, Some(acc))
        }
        None => (history.len().saturating_sub(1), None),
    };
    Ok(TrainOutcome { history, best_epoch, best_val_robust, final_tensors, diverged })
}

fn bpfc_step<F: Float>(
    model: &mut Network<F>,
    batch: &ImageBatch<F>,
    lambda: f64,
    cfg: &TrainConfig,
    noise_seed: u64,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
    grads: &mut GradStore<F>,
) -> Result<LossParts> {
    let labels = batch.labels_vec();
    let m = F::of(1.0 / labels.len() as f64);
    let lam = F::of(lambda);
    let q = quantize_batch(&batch.pixels.view(), &cfg.quant, noise_seed)?;

    let (gx, caches_x) = model.forward_train(&batch.pixels.view(), dropout_rng);
    let (gq, caches_q) = model.forward_train(&q.view(), dropout_rng);

    let (ce, dce) = cross_entropy(&gx.view(), &labels);
    let gap = &gx - &gq;
    let (reg, dreg_x) = match cfg.reg_norm {
        RegNorm::L2Squared => {
            let reg = gap.mapv(|v| v * v).sum() * m;
            let d = gap.mapv(|v| F::of(2.0) * v * m);
            (reg, d)
        }
        RegNorm::L1 => {
            let reg = gap.mapv(|v| v.abs()).sum() * m;
            let d = gap.mapv(|v| {
                if v > F::zero() {
                    m
                } else if v < F::zero() {
                    -m
                } else {
                    F::zero()
                }
            });
            (reg, d)
        }
    };

    let dl_x = dce + dreg_x.mapv(|v| v * lam);
    let dl_q = dreg_x.mapv(|v| -v * lam);
    model.backward(&caches_x, &dl_x, Some(grads), false);
    model.backward(&caches_q, &dl_q, Some(grads), false);

    let total = ce + lam * reg;
    Ok(LossParts { total: total.to_f64(), ce: ce.to_f64(), reg: (lam * reg).to_f64() })
}

fn ce_step<F: Float>(
    model: &mut Network<F>,
    batch: &ImageBatch<F>,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
    grads: &mut GradStore<F>,
) -> LossParts {
    let labels = batch.labels_vec();
    let (logits, caches) = model.forward_train(&batch.pixels.view(), dropout_rng);
    let (ce, dce) = cross_entropy(&logits.view(), &labels);
    model.backward(&caches, &dce, Some(grads), false);
    LossParts { total: ce.to_f64(), ce: ce.to_f64(), reg: 0.0 }
}

/// Accuracy over a batch, evaluated in chunks.
pub fn eval_clean_accuracy<F: Float>(
    model: &dyn Classifier<F>,
    batch: &ImageBatch<F>,
    chunk: usize,
) -> f64 {
    let n = batch.len();
    let mut hits = 0usize;
    let mut at = 0usize;
    while at < n {
        let end = (at + chunk).min(n);
        let part = batch.slice(at..end);
        let pred = model.predict(&part.pixels.view());
        hits += pred
            .iter()
            .zip(part.labels.iter())
            .filter(|(p, y)| **p == **y as usize)
            .count();
        at = end;
    }
    hits as f64 / n as f64
}

/// I-FGSM accuracy over a batch, evaluated in chunks.
pub fn eval_robust_accuracy<F: Float>(
    model: &dyn Classifier<F>,
    batch: &ImageBatch<F>,
    tm: &ThreatModel,
    chunk: usize,
) -> f64 {
    let n = batch.len();
    let mut hits = 0usize;
    let mut at = 0usize;
    while at < n {
        let end = (at + chunk).min(n);
        let part = batch.slice(at..end);
        let labels = part.labels_vec();
        let adv = ifgsm(model, &part.pixels.view(), &labels, tm);
        let pred = model.predict(&adv.view());
        hits += pred
            .iter()
            .zip(&labels)
            .filter(|(p, y)| **p == **y as usize)
            .count();
        at = end;
    }
    hits as f64 / n as f64
}

/// Pad-and-crop plus horizontal flip, in place.
fn augment_in_place<F: Float>(pixels: &mut Array4<F>, rng: &mut rand_chacha::ChaCha8Rng) {
    let (n, c, h, w) = pixels.dim();
    let pad = 4usize;
    for i in 0..n {
        let dy = rng.gen_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.gen_range(0..=2 * pad) as isize - pad as isize;
        let flip = rng.gen::<bool>();
        let src = pixels.index_axis(Axis(0), i).to_owned();
        let mut dst = pixels.index_axis_mut(Axis(0), i);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as isize + dy;
                    let sx = (if flip { w - 1 - x } else { x }) as isize + dx;
                    dst[[ci, y, x]] =
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            src[[ci, sy as usize, sx as usize]]
                        } else {
                            F::zero()
                        };
                }
            }
        }
    }
}

/// Per-sample local smoothness statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeStat {
    pub mean: f64,
    pub max: f64,
    pub draws_used: usize,
}

/// Empirical local-Lipschitz probe: the ratio
/// `||g(x) - g(q(x))||^2 / ||x - q(x)||^2` averaged over independent
/// quantization draws. Draws where q(x) equals x exactly are discarded.
/// A diagnostic, not a certified bound.
pub fn lipschitz_probe<F: Float>(
    model: &dyn Classifier<F>,
    x: &ImageBatch<F>,
    quant: &QuantConfig,
    draws: usize,
    seed: u64,
) -> Result<Vec<ProbeStat>> {
    let n = x.len();
    let gx = model.logits_batch(&x.pixels.view());
    let mut sum = vec![0.0f64; n];
    let mut max = vec![0.0f64; n];
    let mut used = vec![0usize; n];
    for d in 0..draws {
        let q = quantize_batch(
            &x.pixels.view(),
            quant,
            derive_seed_indexed(seed, "probe-draw", d as u64),
        )?;
        let gq = model.logits_batch(&q.view());
        for i in 0..n {
            let num = (&gx.index_axis(Axis(0), i) - &gq.index_axis(Axis(0), i))
                .mapv(|v| v * v)
                .sum()
                .to_f64();
            let den = (&x.pixels.index_axis(Axis(0), i) - &q.index_axis(Axis(0), i))
                .mapv(|v| v * v)
                .sum()
                .to_f64();
            if den <= 1e-24 {
                continue;
            }
            let r = num / den;
            sum[i] += r;
            max[i] = max[i].max(r);
            used[i] += 1;
        }
    }
    Ok((0..n)
        .map(|i| ProbeStat {
            mean: if used[i] > 0 { sum[i] / used[i] as f64 } else { 0.0 },
            max: max[i],
            draws_used: used[i],
        })
        .collect())
}

/// Softmax probabilities of the true class, for loss curves.
pub fn mean_ce_loss<F: Float>(model: &dyn Classifier<F>, batch: &ImageBatch<F>, chunk: usize) -> f64 {
    let n = batch.len();
    let mut total = 0.0f64;
    let mut at = 0usize;
    while at < n {
        let end = (at + chunk).min(n);
        let part = batch.slice(at..end);
        let logits = model.logits_batch(&part.pixels.view());
        let p = softmax(&logits.view());
        for (i, &y) in part.labels.iter().enumerate() {
            total -= p[[i, y as usize]].to_f64().max(1e-30).ln();
        }
        at = end;
    }
    total / n as f64
}


//! Sign-gradient attacks: FGSM, I-FGSM, PGD with restarts, targeted PGD
//! and MI-FGSM.

use crate::attacks::{project, sign_zero, TargetPolicy, ThreatModel};
use crate::float::Float;
use crate::models::Classifier;
use crate::nn::loss::ce_grad_unreduced;
use crate::rng::substream_indexed;
use ndarray::{Array4, ArrayView4, Axis};
use rand::Rng;

/// Gradient of the summed per-sample cross-entropy at the input.
fn ce_input_grad<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
) -> Array4<F> {
    let (_, g) = model.logits_and_input_grad(x, &mut |logits| {
        ce_grad_unreduced(&logits.view(), labels)
    });
    g
}

/// Single-step sign-gradient attack.
pub fn fgsm<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
) -> Array4<F> {
    let mut g = ce_input_grad(model, x, labels);
    sign_zero(&mut g);
    let mut adv = x.to_owned() + g * F::of(tm.eps);
    adv.mapv_inplace(|v| v.max(F::zero()).min(F::one()));
    adv
}

/// Iterated FGSM: `steps` sign steps of size `eps_step`, each projected
/// onto the eps-ball and the image box. No random start.
pub fn ifgsm<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
) -> Array4<F> {
    ascend(model, x, labels, tm, x.to_owned(), false)
}

fn ascend<F: Float>(
    model: &dyn Classifier<F>,
    x0: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
    start: Array4<F>,
    descend: bool,
) -> Array4<F> {
    let mut adv = start;
    let step = F::of(tm.eps_step);
    for _ in 0..tm.steps {
        let mut g = ce_input_grad(model, &adv.view(), labels);
        sign_zero(&mut g);
        if descend {
            adv = adv - g * step;
        } else {
            adv = adv + g * step;
        }
        project(x0, &mut adv, tm.eps);
    }
    adv
}

fn random_start<F: Float>(x0: &ArrayView4<F>, tm: &ThreatModel, restart: u64) -> Array4<F> {
    let mut rng = substream_indexed(tm.seed, "pgd-restart", restart);
    let mut start = x0.to_owned();
    if tm.random_start {
        let e = tm.eps;
        start.mapv_inplace(|v| {
            (v + F::of(rng.gen_range(-e..=e))).max(F::zero()).min(F::one())
        });
    }
    start
}

#[derive(Debug, Clone)]
pub struct PgdOutcome<F> {
    /// Per-sample witness: output of the first restart that fooled the
    /// sample, or of restart 0 when none did.
    pub adv: Array4<F>,
    /// True iff the sample stayed correctly classified under every restart.
    pub worst_correct: Vec<bool>,
    /// Worst-case accuracy after each restart prefix 1..=restarts.
    pub prefix_worst_acc: Vec<f64>,
}

impl<F> PgdOutcome<F> {
    pub fn accuracy(&self) -> f64 {
        self.worst_correct.iter().filter(|&&c| c).count() as f64
            / self.worst_correct.len() as f64
    }
}

/// PGD: random-started iterated sign steps, aggregated over restarts with
/// worst-case per-sample accounting. Samples already fooled by an earlier
/// restart are dropped from later ones (the worst-case verdict cannot
/// change back).
pub fn pgd<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
) -> PgdOutcome<F> {
    let n = labels.len();
    let mut worst_correct = vec![true; n];
    let mut adv_out = x.to_owned();
    let mut first = true;
    let mut prefix = Vec::with_capacity(tm.restarts);
    for r in 0..tm.restarts {
        let active: Vec<usize> = (0..n).filter(|&i| worst_correct[i]).collect();
        if active.is_empty() {
            prefix.push(0.0);
            continue;
        }
        let xa = gather(x, &active);
        let ya: Vec<u8> = active.iter().map(|&i| labels[i]).collect();
        let start = random_start(&xa.view(), tm, r as u64);
        let adv = ascend(model, &xa.view(), &ya, tm, start, false);
        let pred = model.predict(&adv.view());
        for (row, &i) in active.iter().enumerate() {
            let fooled = pred[row] != labels[i] as usize;
            if fooled {
                worst_correct[i] = false;
            }
            if fooled || first {
                adv_out
                    .index_axis_mut(Axis(0), i)
                    .assign(&adv.index_axis(Axis(0), row));
            }
        }
        first = false;
        prefix.push(worst_correct.iter().filter(|&&c| c).count() as f64 / n as f64);
    }
    PgdOutcome { adv: adv_out, worst_correct, prefix_worst_acc: prefix }
}

/// PGD variant that keeps every restart's output; for tests and small
/// studies only.
pub fn pgd_all_restarts<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
) -> (Vec<Array4<F>>, Vec<bool>) {
    let n = labels.len();
    let mut worst_correct = vec![true; n];
    let mut all = Vec::with_capacity(tm.restarts);
    for r in 0..tm.restarts {
        let start = random_start(x, tm, r as u64);
        let adv = ascend(model, x, labels, tm, start, false);
        let pred = model.predict(&adv.view());
        for i in 0..n {
            if pred[i] != labels[i] as usize {
                worst_correct[i] = false;
            }
        }
        all.push(adv);
    }
    (all, worst_correct)
}

#[derive(Debug, Clone)]
pub struct TargetedOutcome<F> {
    pub adv: Array4<F>,
    pub targets: Vec<u8>,
    /// Fraction still predicting the true label (the reported accuracy).
    pub true_label_acc: f64,
    /// Fraction predicting the attack target.
    pub target_hit_rate: f64,
}

/// Targeted PGD: descend the cross-entropy toward the selected target.
pub fn pgd_targeted<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
) -> TargetedOutcome<F> {
    let n = labels.len();
    let classes = model.class_count();
    let targets: Vec<u8> = match tm.target_policy {
        TargetPolicy::LeastLikely => {
            let p = model.probs(x);
            (0..n)
                .map(|i| {
                    let row = p.index_axis(Axis(0), i);
                    row.iter()
                        .enumerate()
                        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(k, _)| k as u8)
                        .unwrap()
                })
                .collect()
        }
        TargetPolicy::RandomTarget => {
            let mut rng = substream_indexed(tm.seed, "targets", 0);
            (0..n)
                .map(|i| {
                    // Uniform over the classes other than the true label.
                    let draw = rng.gen_range(0..classes - 1) as u8;
                    if draw >= labels[i] {
                        draw + 1
                    } else {
                        draw
                    }
                })
                .collect()
        }
        TargetPolicy::Fixed(t) => vec![t; n],
        TargetPolicy::Untargeted => {
            panic!("pgd_targeted requires a target policy")
        }
    };

    let start = random_start(x, tm, 0);
    let adv = ascend(model, x, &targets, tm, start, true);
    let pred = model.predict(&adv.view());
    let still_true = pred
        .iter()
        .zip(labels)
        .filter(|(p, y)| **p == **y as usize)
        .count();
    let hit = pred
        .iter()
        .zip(&targets)
        .filter(|(p, t)| **p == **t as usize)
        .count();
    TargetedOutcome {
        adv,
        targets,
        true_label_acc: still_true as f64 / n as f64,
        target_hit_rate: hit as f64 / n as f64,
    }
}

/// Momentum iterative FGSM: accumulate the l1-normalized gradient and
/// step along the sign of the accumulator.
pub fn mi_fgsm<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
    decay: f64,
) -> Array4<F> {
    let mut adv = x.to_owned();
    let mut momentum = Array4::<F>::zeros(x.dim());
    let step = F::of(tm.eps_step);
    let mu = F::of(decay);
    let n = labels.len();
    for _ in 0..tm.steps {
        let g = ce_input_grad(model, &adv.view(), labels);
        // Per-sample l1 normalization.
        let mut norms = vec![F::zero(); n];
        for i in 0..n {
            norms[i] = g.index_axis(Axis(0), i).mapv(|v| v.abs()).sum();
        }
        for i in 0..n {
            let ni = norms[i];
            let scale = if ni > F::zero() { F::one() / ni } else { F::zero() };
            let gi = g.index_axis(Axis(0), i);
            let mut mi = momentum.index_axis_mut(Axis(0), i);
            mi.zip_mut_with(&gi, |m, &gv| *m = mu * *m + gv * scale);
        }
        let mut s = momentum.clone();
        sign_zero(&mut s);
        adv = adv + s * step;
        project(x, &mut adv, tm.eps);
    }
    adv
}

fn gather<F: Float>(x: &ArrayView4<F>, idx: &[usize]) -> Array4<F> {
    let (_, c, h, w) = x.dim();
    let mut out = Array4::<F>::zeros((idx.len(), c, h, w));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), row).assign(&x.index_axis(Axis(0), i));
    }
    out
}

//! DeepFool: iterative linearized minimal l2 perturbation.

use crate::float::Float;
use crate::models::Classifier;
use ndarray::{Array2, Array4, ArrayView4, Axis};

const OVERSHOOT: f64 = 1.02;

#[derive(Debug, Clone)]
pub struct DeepFoolOutcome<F> {
    pub adv: Array4<F>,
    pub fooled: Vec<bool>,
    /// l2 norm of the applied perturbation, per sample.
    pub l2: Vec<f64>,
}

impl<F> DeepFoolOutcome<F> {
    pub fn fooling_rate(&self) -> f64 {
        self.fooled.iter().filter(|&&f| f).count() as f64 / self.fooled.len() as f64
    }

    /// Mean l2 over successfully fooled samples.
    pub fn mean_l2_fooled(&self) -> f64 {
        let vals: Vec<f64> = self
            .l2
            .iter()
            .zip(&self.fooled)
            .filter(|(_, &f)| f)
            .map(|(&v, _)| v)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// Untargeted, unbounded attack; iterates until the prediction flips or
/// `max_steps` is reached. The perturbation gets the standard small
/// overshoot; iterates are kept inside the valid image box.
pub fn deepfool<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    max_steps: usize,
) -> DeepFoolOutcome<F> {
    let n = x.dim().0;
    let classes = model.class_count();
    let orig_pred = model.predict(x);

    let mut adv = x.to_owned();
    let mut r_total = Array4::<F>::zeros(x.dim());
    let mut fooled = vec![false; n];
    // Already-misclassified inputs count as fooled at zero perturbation.
    let mut active: Vec<usize> = (0..n).collect();

    for step in 0..=max_steps {
        if active.is_empty() {
            break;
        }
        let xa = gather(&adv.view(), &active);
        let pred = model.predict(&xa.view());
        let mut still = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            if pred[row] != orig_pred[i] {
                fooled[i] = true;
            } else {
                still.push(i);
            }
        }
        active = still;
        if active.is_empty() || step == max_steps {
            break;
        }

        let xa = gather(&adv.view(), &active);
        let logits = model.logits_batch(&xa.view());
        // Gradients of every class logit for the active rows.
        let mut grads: Vec<Array4<F>> = Vec::with_capacity(classes);
        for k in 0..classes {
            let mut dl = Array2::<F>::zeros(logits.dim());
            dl.column_mut(k).fill(F::one());
            grads.push(model.input_grad(&xa.view(), &dl));
        }

        for (row, &i) in active.iter().enumerate() {
            let c = orig_pred[i];
            let g_c = grads[c].index_axis(Axis(0), row);
            let mut best: Option<(f64, usize)> = None;
            for k in 0..classes {
                if k == c {
                    continue;
                }
                let wk = (&grads[k].index_axis(Axis(0), row) - &g_c).mapv(|v| v * v).sum();
                let wk_norm = wk.to_f64().sqrt().max(1e-12);
                let fk = (logits[[row, k]] - logits[[row, c]]).to_f64().abs();
                let ratio = fk / wk_norm;
                if best.map_or(true, |(b, _)| ratio < b) {
                    best = Some((ratio, k));
                }
            }
            let (_, l) = best.expect("at least two classes");
            let w_l = &grads[l].index_axis(Axis(0), row) - &grads[c].index_axis(Axis(0), row);
            let w_sq = w_l.mapv(|v| v * v).sum().to_f64().max(1e-24);
            let f_l = (logits[[row, l]] - logits[[row, c]]).to_f64().abs() + 1e-6;
            let scale = F::of(f_l / w_sq);
            let mut r_i = r_total.index_axis_mut(Axis(0), i);
            r_i.zip_mut_with(&w_l, |r, &wv| *r = *r + wv * scale);
        }

        // Re-apply the accumulated perturbation with overshoot.
        let over = F::of(OVERSHOOT);
        for &i in &active {
            let x_i = x.index_axis(Axis(0), i);
            let r_i = r_total.index_axis(Axis(0), i);
            let mut a_i = adv.index_axis_mut(Axis(0), i);
            ndarray::Zip::from(&mut a_i).and(&x_i).and(&r_i).for_each(|a, &xv, &rv| {
                *a = (xv + over * rv).max(F::zero()).min(F::one());
            });
        }
    }

    let l2 = crate::attacks::l2_per_sample(&adv.view(), x);
    DeepFoolOutcome { adv, fooled, l2 }
}

fn gather<F: Float>(x: &ArrayView4<F>, idx: &[usize]) -> Array4<F> {
    let (_, c, h, w) = x.dim();
    let mut out = Array4::<F>::zeros((idx.len(), c, h, w));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), row).assign(&x.index_axis(Axis(0), i));
    }
    out
}

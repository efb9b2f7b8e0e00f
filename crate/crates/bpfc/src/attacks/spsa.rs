//! Gradient-free attacks: SPSA and random-noise search.

use crate::attacks::{project, sign_zero, ThreatModel};
use crate::float::Float;
use crate::models::Classifier;
use crate::nn::loss::ce_per_sample;
use crate::rng::substream_indexed;
use ndarray::{Array4, ArrayView4, Axis};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct SpsaOpts {
    /// Finite-difference perturbation size.
    pub delta: f64,
    /// Step size of the ascent.
    pub learning_rate: f64,
    /// Number of random directions per gradient estimate.
    pub n_samples: usize,
    pub iterations: usize,
}

impl Default for SpsaOpts {
    fn default() -> Self {
        SpsaOpts { delta: 0.01, learning_rate: 0.01, n_samples: 128, iterations: 5 }
    }
}

/// SPSA gradient estimate of the cross-entropy, averaged over Rademacher
/// directions, followed by a projected sign step. Only the forward pass
/// of the model is used.
pub fn spsa<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
    opts: &SpsaOpts,
) -> Array4<F> {
    let mut adv = x.to_owned();
    let delta = F::of(opts.delta);
    let lr = F::of(opts.learning_rate);
    for it in 0..opts.iterations {
        let mut est = Array4::<F>::zeros(x.dim());
        for s in 0..opts.n_samples {
            let mut rng =
                substream_indexed(tm.seed, "spsa", (it * opts.n_samples + s) as u64);
            let dir = Array4::<F>::from_shape_simple_fn(x.dim(), || {
                if rng.gen::<bool>() {
                    F::one()
                } else {
                    -F::one()
                }
            });
            let up = &adv + &(&dir * delta);
            let down = &adv - &(&dir * delta);
            let lu = ce_per_sample(&model.logits_batch(&up.view()).view(), labels);
            let ld = ce_per_sample(&model.logits_batch(&down.view()).view(), labels);
            for i in 0..labels.len() {
                let coeff = (lu[i] - ld[i]) / (F::of(2.0) * delta);
                let mut e = est.index_axis_mut(Axis(0), i);
                e.zip_mut_with(&dir.index_axis(Axis(0), i), |ev, &dv| {
                    *ev = *ev + coeff * dv;
                });
            }
        }
        est.mapv_inplace(|v| v / F::of(opts.n_samples as f64));
        sign_zero(&mut est);
        adv = adv + est * lr;
        project(x, &mut adv, tm.eps);
    }
    adv
}

/// Random-noise attack: per sample, draw `n_samples` i.i.d. uniform
/// points inside the eps-ball; a sample survives only if the model is
/// correct on every draw. Returns the per-sample worst-case mask.
pub fn random_noise_attack<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
    n_samples: usize,
) -> Vec<bool> {
    let n = labels.len();
    let mut correct = vec![true; n];
    let e = tm.eps;
    // Evaluate in rounds so fooled samples drop out early.
    for round in 0..n_samples {
        let active: Vec<usize> = (0..n).filter(|&i| correct[i]).collect();
        if active.is_empty() {
            break;
        }
        let mut batch = Array4::<F>::zeros((active.len(), x.dim().1, x.dim().2, x.dim().3));
        for (row, &i) in active.iter().enumerate() {
            let mut rng = substream_indexed(
                tm.seed,
                "random-noise",
                (i * n_samples + round) as u64,
            );
            let src = x.index_axis(Axis(0), i);
            let mut dst = batch.index_axis_mut(Axis(0), row);
            ndarray::Zip::from(&mut dst).and(&src).for_each(|d, &s| {
                *d = (s + F::of(rng.gen_range(-e..=e))).max(F::zero()).min(F::one());
            });
        }
        let pred = model.predict(&batch.view());
        for (row, &i) in active.iter().enumerate() {
            if pred[row] != labels[i] as usize {
                correct[i] = false;
            }
        }
    }
    correct
}

//! Defense-aware adaptive attack: PGD ascent on a weighted combination
//! of cross-entropy, the feature-consistency term, and an LSB-magnitude
//! penalty.

use crate::attacks::{project, sign_zero, ThreatModel};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::models::Classifier;
use crate::nn::loss::ce_grad_unreduced;
use crate::quant::{quantize_batch_with_mask, QuantConfig};
use crate::rng::derive_seed_indexed;
use ndarray::{Array4, ArrayView4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveLossWeights {
    pub lambda_ce: f64,
    pub lambda_g: f64,
    pub lambda_lsb: f64,
}

impl AdaptiveLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_ce < 0.0 || self.lambda_g < 0.0 || self.lambda_lsb < 0.0 {
            return Err(Error::InvalidThreat("adaptive weights must be nonnegative".into()));
        }
        if self.lambda_ce == 0.0 && self.lambda_g == 0.0 && self.lambda_lsb == 0.0 {
            return Err(Error::InvalidThreat("at least one adaptive weight must be nonzero".into()));
        }
        Ok(())
    }
}

/// Ascend `l_ce*ce(f(x),y) + l_g*||g(x)-g(q(x))||^2 - l_lsb*||x-q(x)||^2`.
///
/// The network branch through g(q(x)) uses the quantizer's
/// straight-through convention (gradient 1 where unclipped, 0 where
/// clipped); the direct `x - q(x)` distance treats q(x) as a constant,
/// matching its almost-everywhere derivative. With `resample_noise`, a
/// fresh quantization draw is taken every iteration, which is the
/// distribution the defense was trained against; otherwise the draw is
/// fixed once per run.
pub fn adaptive_attack<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    tm: &ThreatModel,
    weights: &AdaptiveLossWeights,
    quant: &QuantConfig,
    resample_noise: bool,
) -> Result<Array4<F>> {
    weights.validate()?;
    tm.validate()?;

    let mut adv = x.to_owned();
    if tm.random_start {
        use rand::Rng;
        let mut rng = crate::rng::substream_indexed(tm.seed, "adaptive-start", 0);
        let e = tm.eps;
        adv.mapv_inplace(|v| {
            (v + F::of(rng.gen_range(-e..=e))).max(F::zero()).min(F::one())
        });
    }

    let step = F::of(tm.eps_step);
    let two = F::of(2.0);
    for it in 0..tm.steps {
        let noise_seed = if resample_noise {
            derive_seed_indexed(tm.seed, "adaptive-noise", it as u64)
        } else {
            derive_seed_indexed(tm.seed, "adaptive-noise", 0)
        };
        let (q, clip_mask) = quantize_batch_with_mask(&adv.view(), quant, noise_seed)?;

        let (logits_x, caches_needed) = (model.logits_batch(&adv.view()), ());
        let _ = caches_needed;
        let logits_q = model.logits_batch(&q.view());
        let gap = &logits_x - &logits_q;

        // Branch through g(x): ce gradient plus 2*l_g*(g(x)-g(q)).
        let mut dl_x = ce_grad_unreduced(&logits_x.view(), labels);
        dl_x.mapv_inplace(|v| v * F::of(weights.lambda_ce));
        if weights.lambda_g != 0.0 {
            dl_x = dl_x + gap.mapv(|v| v * two * F::of(weights.lambda_g));
        }
        let mut g = model.input_grad(&adv.view(), &dl_x);

        // Branch through g(q(x)) with the straight-through mask.
        if weights.lambda_g != 0.0 {
            let dl_q = gap.mapv(|v| -v * two * F::of(weights.lambda_g));
            let gq = model.input_grad(&q.view(), &dl_q);
            ndarray::Zip::from(&mut g).and(&gq).and(&clip_mask).for_each(|gv, &gqv, &mv| {
                *gv = *gv + gqv * mv;
            });
        }

        // LSB penalty: -l_lsb * d/dx ||x - q||^2 = -2*l_lsb*(x - q).
        if weights.lambda_lsb != 0.0 {
            let c = two * F::of(weights.lambda_lsb);
            ndarray::Zip::from(&mut g).and(&adv).and(&q).for_each(|gv, &av, &qv| {
                *gv = *gv - c * (av - qv);
            });
        }

        sign_zero(&mut g);
        adv = adv + g * step;
        project(x, &mut adv, tm.eps);
    }
    Ok(adv)
}

//! The attack battery.
//!
//! Every bounded attack returns candidates inside the l-inf ball of
//! radius epsilon around the clean input, intersected with [0,1]. All
//! randomness is derived from the threat-model seed, so identical
//! (model, batch, config) inputs give bitwise-identical outputs.

mod adaptive;
mod cw;
mod deepfool;
mod gradsign;
mod spsa;

pub use adaptive::{adaptive_attack, AdaptiveLossWeights};
pub use cw::{cw_l2, CwOpts, CwOutcome};
pub use deepfool::{deepfool, DeepFoolOutcome};
pub use gradsign::{fgsm, ifgsm, mi_fgsm, pgd, pgd_all_restarts, pgd_targeted, PgdOutcome, TargetedOutcome};
pub use spsa::{random_noise_attack, spsa, SpsaOpts};

use crate::error::{Error, Result};
use crate::float::Float;
use ndarray::{Array4, ArrayView4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    Untargeted,
    LeastLikely,
    RandomTarget,
    /// Fixed target class for every sample.
    Fixed(u8),
}

/// The admissible adversary: l-inf budget, step schedule and restart
/// policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatModel {
    /// l-inf radius in [0,1] pixel units.
    pub eps: f64,
    /// Per-iteration step size.
    pub eps_step: f64,
    pub steps: usize,
    pub restarts: usize,
    pub random_start: bool,
    pub target_policy: TargetPolicy,
    pub seed: u64,
}

impl ThreatModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::InvalidThreat(format!("eps {} outside [0,1]", self.eps)));
        }
        if self.eps_step < 0.0 {
            return Err(Error::InvalidThreat("negative step size".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidThreat("restarts must be >= 1".into()));
        }
        if self.restarts > 1 && !self.random_start {
            return Err(Error::InvalidThreat(
                "restarts > 1 without random_start are identical runs".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

/// sign with sign(0) = 0, applied elementwise.
pub(crate) fn sign_zero<F: Float>(g: &mut Array4<F>) {
    g.mapv_inplace(|v| {
        if v > F::zero() {
            F::one()
        } else if v < F::zero() {
            -F::one()
        } else {
            F::zero()
        }
    });
}

/// Project onto the eps-ball around `x0`, then onto the image box [0,1].
pub(crate) fn project<F: Float>(x0: &ArrayView4<F>, x: &mut Array4<F>, eps: f64) {
    let e = F::of(eps);
    ndarray::Zip::from(x).and(x0).for_each(|xv, &x0v| {
        let lo = (x0v - e).max(F::zero());
        let hi = (x0v + e).min(F::one());
        *xv = (*xv).max(lo).min(hi);
    });
}

/// Max l-inf distance between two batches (reporting/tests).
pub fn linf_distance<F: Float>(a: &ArrayView4<F>, b: &ArrayView4<F>) -> f64 {
    let mut m = 0.0f64;
    ndarray::Zip::from(a).and(b).for_each(|&av, &bv| {
        m = m.max((av - bv).abs().to_f64());
    });
    m
}

/// Per-sample l2 norms of the perturbation.
pub fn l2_per_sample<F: Float>(a: &ArrayView4<F>, b: &ArrayView4<F>) -> Vec<f64> {
    let n = a.dim().0;
    let mut out = vec![0.0f64; n];
    for i in 0..n {
        let d = &a.index_axis(ndarray::Axis(0), i).to_owned()
            - &b.index_axis(ndarray::Axis(0), i);
        out[i] = d.mapv(|v| v * v).sum().to_f64().sqrt();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threat_model_validation() {
        let mut tm = ThreatModel {
            eps: 0.3,
            eps_step: 0.01,
            steps: 40,
            restarts: 1,
            random_start: false,
            target_policy: TargetPolicy::Untargeted,
            seed: 0,
        };
        assert!(tm.validate().is_ok());
        tm.restarts = 5;
        assert!(tm.validate().is_err(), "restarts without random start");
        tm.random_start = true;
        assert!(tm.validate().is_ok());
        tm.eps = 1.5;
        assert!(tm.validate().is_err());
    }
}

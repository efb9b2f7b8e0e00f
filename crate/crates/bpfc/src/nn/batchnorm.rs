//! Per-channel batch normalization for (N, C, H, W) maps.

use crate::float::Float;
use ndarray::{Array1, Array4, ArrayView4};

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: f64,
    pub eps: f64,
}

/// Per-call state the backward pass needs.
#[derive(Debug, Clone)]
pub struct BnCache<F> {
    pub xhat: Array4<F>,
    pub inv_std: Array1<F>,
    /// True when normalized with batch statistics (training mode).
    pub batch_stats: bool,
}

impl<F: Float> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training-mode forward: normalize with batch statistics and update
    /// the running estimates.
    pub fn forward_train(&mut self, x: &ArrayView4<F>) -> (Array4<F>, BnCache<F>) {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f64;
        let mut mean = Array1::<F>::zeros(c);
        let mut var = Array1::<F>::zeros(c);
        for ci in 0..c {
            let plane = x.index_axis(ndarray::Axis(1), ci);
            let m = plane.sum() * F::of(1.0 / count);
            let mut v = F::zero();
            for &val in plane.iter() {
                let d = val - m;
                v = v + d * d;
            }
            mean[ci] = m;
            var[ci] = v * F::of(1.0 / count);
        }
        // Running stats use the unbiased variance estimate.
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let mom = F::of(self.momentum);
        let keep = F::of(1.0 - self.momentum);
        for ci in 0..c {
            self.running_mean[ci] = keep * self.running_mean[ci] + mom * mean[ci];
            self.running_var[ci] = keep * self.running_var[ci] + mom * var[ci] * F::of(unbias);
        }
        self.normalize(x, &mean, &var, true)
    }

    /// Inference-mode forward: stored running statistics, no mutation.
    pub fn forward_eval(&self, x: &ArrayView4<F>) -> (Array4<F>, BnCache<F>) {
        self.normalize(x, &self.running_mean, &self.running_var, false)
    }

    fn normalize(
        &self,
        x: &ArrayView4<F>,
        mean: &Array1<F>,
        var: &Array1<F>,
        batch_stats: bool,
    ) -> (Array4<F>, BnCache<F>) {
        let (n, c, h, w) = x.dim();
        let mut inv_std = Array1::<F>::zeros(c);
        for ci in 0..c {
            inv_std[ci] = F::one() / (var[ci] + F::of(self.eps)).sqrt();
        }
        let mut xhat = Array4::<F>::zeros((n, c, h, w));
        let mut y = Array4::<F>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let (m, s) = (mean[ci], inv_std[ci]);
                let (g, b) = (self.gamma[ci], self.beta[ci]);
                for i in 0..h {
                    for j in 0..w {
                        let xh = (x[[ni, ci, i, j]] - m) * s;
                        xhat[[ni, ci, i, j]] = xh;
                        y[[ni, ci, i, j]] = g * xh + b;
                    }
                }
            }
        }
        (y, BnCache { xhat, inv_std, batch_stats })
    }

    /// Input gradient plus (d_gamma, d_beta).
    pub fn backward(
        &self,
        cache: &BnCache<F>,
        gy: &ArrayView4<F>,
    ) -> (Array4<F>, Array1<F>, Array1<F>) {
        let (n, c, h, w) = gy.dim();
        let count = F::of((n * h * w) as f64);
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        for ci in 0..c {
            let mut dg = F::zero();
            let mut db = F::zero();
            for ni in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        dg = dg + gy[[ni, ci, i, j]] * cache.xhat[[ni, ci, i, j]];
                        db = db + gy[[ni, ci, i, j]];
                    }
                }
            }
            dgamma[ci] = dg;
            dbeta[ci] = db;
        }
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        if cache.batch_stats {
            // Full batch-statistics gradient.
            for ci in 0..c {
                let scale = self.gamma[ci] * cache.inv_std[ci];
                let dg = dgamma[ci];
                let db = dbeta[ci];
                for ni in 0..n {
                    for i in 0..h {
                        for j in 0..w {
                            let term = gy[[ni, ci, i, j]] * count
                                - db
                                - cache.xhat[[ni, ci, i, j]] * dg;
                            dx[[ni, ci, i, j]] = scale * term / count;
                        }
                    }
                }
            }
        } else {
            // Running statistics are constants: the map is affine per channel.
            for ci in 0..c {
                let scale = self.gamma[ci] * cache.inv_std[ci];
                for ni in 0..n {
                    for i in 0..h {
                        for j in 0..w {
                            dx[[ni, ci, i, j]] = gy[[ni, ci, i, j]] * scale;
                        }
                    }
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

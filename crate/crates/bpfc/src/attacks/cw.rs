//! Carlini-Wagner l2 attack (untargeted) with binary search over the
//! trade-off constant and Adam in tanh space.

use crate::float::Float;
use crate::models::Classifier;
use ndarray::{Array2, Array4, ArrayView4, Axis};

#[derive(Debug, Clone, Copy)]
pub struct CwOpts {
    pub search_steps: usize,
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub initial_const: f64,
    pub confidence: f64,
}

impl Default for CwOpts {
    fn default() -> Self {
        CwOpts {
            search_steps: 9,
            max_iterations: 200,
            learning_rate: 0.01,
            initial_const: 1e-3,
            confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CwOutcome<F> {
    pub adv: Array4<F>,
    pub fooled: Vec<bool>,
    pub l2: Vec<f64>,
}

impl<F> CwOutcome<F> {
    pub fn fooling_rate(&self) -> f64 {
        self.fooled.iter().filter(|&&f| f).count() as f64 / self.fooled.len() as f64
    }

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

const TANH_CLAMP: f64 = 1.0 - 1e-6;

fn atanh(v: f64) -> f64 {
    0.5 * ((1.0 + v) / (1.0 - v)).ln()
}

/// Minimize ||x'-x||^2 + c * max(Z_y - max_{k!=y} Z_k, -confidence) over
/// x' = (tanh(w)+1)/2, binary-searching c per sample.
pub fn cw_l2<F: Float>(
    model: &dyn Classifier<F>,
    x: &ArrayView4<F>,
    labels: &[u8],
    opts: &CwOpts,
) -> CwOutcome<F> {
    let n = labels.len();
    let dim = x.dim();

    // tanh-space image of the clean input.
    let w0 = x.mapv(|v| {
        let c = (v.to_f64() * 2.0 - 1.0).clamp(-TANH_CLAMP, TANH_CLAMP);
        F::of(atanh(c))
    });

    let mut c_lo = vec![0.0f64; n];
    let mut c_hi = vec![1e10f64; n];
    let mut c_cur = vec![opts.initial_const; n];

    let mut best_adv = x.to_owned();
    let mut best_l2 = vec![f64::INFINITY; n];
    let mut fooled = vec![false; n];

    for _search in 0..opts.search_steps {
        // Adam state over w, restarted for each constant.
        let mut w = w0.clone();
        let mut m = Array4::<F>::zeros(dim);
        let mut v = Array4::<F>::zeros(dim);
        let (b1, b2, eps_adam) = (0.9f64, 0.999f64, 1e-8f64);
        let mut success_this_c = vec![false; n];

        for it in 0..opts.max_iterations {
            let adv = w.mapv(|wi| (wi.tanh() + F::one()) * F::of(0.5));
            let (logits, grad_x) = model.logits_and_input_grad(&adv.view(), &mut |logits| {
                margin_grad(logits, labels, &c_cur, opts.confidence)
            });

            // Track best successful perturbation.
            let pred = crate::nn::loss::predictions(&logits.view());
            let l2 = crate::attacks::l2_per_sample(&adv.view(), x);
            for i in 0..n {
                if pred[i] != labels[i] as usize {
                    success_this_c[i] = true;
                    fooled[i] = true;
                    if l2[i] < best_l2[i] {
                        best_l2[i] = l2[i];
                        best_adv
                            .index_axis_mut(Axis(0), i)
                            .assign(&adv.index_axis(Axis(0), i));
                    }
                }
            }

            // Full objective gradient at adv: 2(adv - x) + c * margin term,
            // then through the tanh reparameterization.
            let mut g = grad_x;
            ndarray::Zip::from(&mut g).and(&adv).and(x).for_each(|gv, &av, &xv| {
                *gv = *gv + (av - xv) * F::of(2.0);
            });
            ndarray::Zip::from(&mut g).and(&w).for_each(|gv, &wv| {
                let t = wv.tanh();
                *gv = *gv * (F::one() - t * t) * F::of(0.5);
            });

            // Adam step.
            let t = (it + 1) as f64;
            let lr_t = opts.learning_rate * (1.0 - b2.powf(t)).sqrt() / (1.0 - b1.powf(t));
            ndarray::Zip::from(&mut w)
                .and(&mut m)
                .and(&mut v)
                .and(&g)
                .for_each(|wv, mv, vv, &gv| {
                    *mv = F::of(b1) * *mv + F::of(1.0 - b1) * gv;
                    *vv = F::of(b2) * *vv + F::of(1.0 - b2) * gv * gv;
                    *wv = *wv - F::of(lr_t) * *mv / (vv.sqrt() + F::of(eps_adam));
                });
        }

        // Binary search update per sample.
        for i in 0..n {
            if success_this_c[i] {
                c_hi[i] = c_hi[i].min(c_cur[i]);
                c_cur[i] = 0.5 * (c_lo[i] + c_hi[i]);
            } else {
                c_lo[i] = c_lo[i].max(c_cur[i]);
                c_cur[i] = if c_hi[i] < 1e9 {
                    0.5 * (c_lo[i] + c_hi[i])
                } else {
                    c_cur[i] * 10.0
                };
            }
        }
    }

    let l2 = (0..n)
        .map(|i| if fooled[i] { best_l2[i] } else { 0.0 })
        .collect();
    CwOutcome { adv: best_adv, fooled, l2 }
}

/// Gradient at the logits of c * max(Z_y - max_{k!=y} Z_k, -confidence),
/// per sample.
fn margin_grad<F: Float>(
    logits: &Array2<F>,
    labels: &[u8],
    c: &[f64],
    confidence: f64,
) -> Array2<F> {
    let n = logits.nrows();
    let mut g = Array2::<F>::zeros(logits.dim());
    for i in 0..n {
        let y = labels[i] as usize;
        let row = logits.index_axis(Axis(0), i);
        let mut best_other = usize::MAX;
        let mut best_val = F::neg_infinity();
        for k in 0..row.len() {
            if k != y && row[k] > best_val {
                best_val = row[k];
                best_other = k;
            }
        }
        let margin = (row[y] - best_val).to_f64();
        if margin > -confidence {
            g[[i, y]] = F::of(c[i]);
            g[[i, best_other]] = F::of(-c[i]);
        }
    }
    g
}

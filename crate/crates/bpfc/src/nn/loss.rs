//! Softmax and cross-entropy, with gradients at the logits.

use crate::float::Float;
use ndarray::{Array1, Array2, ArrayView2, Axis};

/// Row-wise softmax with max subtraction.
pub fn softmax<F: Float>(logits: &ArrayView2<F>) -> Array2<F> {
    let mut p = logits.to_owned();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Per-sample cross-entropy −log p_y.
pub fn ce_per_sample<F: Float>(logits: &ArrayView2<F>, labels: &[u8]) -> Array1<F> {
    let p = softmax(logits);
    let n = logits.nrows();
    let mut out = Array1::<F>::zeros(n);
    for i in 0..n {
        let py = p[[i, labels[i] as usize]].max(F::of(1e-30));
        out[i] = -py.ln();
    }
    out
}

/// Mean cross-entropy and its gradient at the logits, `(p − y)/n`.
pub fn cross_entropy<F: Float>(logits: &ArrayView2<F>, labels: &[u8]) -> (F, Array2<F>) {
    let n = logits.nrows();
    let p = softmax(logits);
    let mut loss = F::zero();
    let mut grad = p;
    let inv = F::of(1.0 / n as f64);
    for i in 0..n {
        let y = labels[i] as usize;
        loss = loss - grad[[i, y]].max(F::of(1e-30)).ln();
        grad[[i, y]] = grad[[i, y]] - F::one();
    }
    grad.mapv_inplace(|v| v * inv);
    (loss * inv, grad)
}

/// Per-sample gradient of −log p_y at the logits (no 1/n reduction):
/// useful for attacks, where samples are optimized independently.
pub fn ce_grad_unreduced<F: Float>(logits: &ArrayView2<F>, labels: &[u8]) -> Array2<F> {
    let mut grad = softmax(logits);
    for i in 0..grad.nrows() {
        let y = labels[i] as usize;
        grad[[i, y]] = grad[[i, y]] - F::one();
    }
    grad
}

pub fn predictions<F: Float>(logits: &ArrayView2<F>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

pub fn accuracy<F: Float>(logits: &ArrayView2<F>, labels: &[u8]) -> f64 {
    let pred = predictions(logits);
    let hits = pred
        .iter()
        .zip(labels)
        .filter(|(p, y)| **p == **y as usize)
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = array![[1.0f64, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax(&l.view());
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn two_class_ce_matches_closed_form() {
        // logits [1, 0], label 0: loss = -ln(e/(e+1)).
        let l = array![[1.0f64, 0.0]];
        let (loss, _) = cross_entropy(&l.view(), &[0]);
        let expect = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn ce_gradient_is_p_minus_onehot() {
        let l = array![[0.2f64, -0.3, 0.9]];
        let (_, g) = cross_entropy(&l.view(), &[2]);
        let p = softmax(&l.view());
        assert!((g[[0, 0]] - p[[0, 0]]).abs() < 1e-12);
        assert!((g[[0, 2]] - (p[[0, 2]] - 1.0)).abs() < 1e-12);
    }
}

//! Central finite differences over network parameters and inputs.
//!
//! These evaluators only ever call the forward pass, so they are an
//! independent check of every backward implementation in [`crate::nn`].

use crate::float::Float;
use crate::nn::network::{visit_tensors_mut, Network};
use ndarray::Array4;

/// Central-difference gradient of `loss(net)` with respect to every
/// trainable parameter, flattened in visit order.
pub fn numerical_grad_params<F: Float>(
    net: &mut Network<F>,
    eps: f64,
    mut loss: impl FnMut(&Network<F>) -> f64,
) -> Vec<f64> {
    // Collect (tensor index within visit order, element count).
    let mut grad = Vec::new();
    let n_tensors = {
        let mut n = 0;
        visit_tensors_mut(&mut net.layers, "", &mut |_, _, _| n += 1);
        n
    };
    for t in 0..n_tensors {
        let len = tensor_len(net, t);
        for i in 0..len {
            let orig = peek(net, t, i);
            poke(net, t, i, orig + F::of(eps));
            let up = loss(net);
            poke(net, t, i, orig - F::of(eps));
            let down = loss(net);
            poke(net, t, i, orig);
            grad.push((up - down) / (2.0 * eps));
        }
    }
    grad
}

/// Central-difference gradient of `loss(x)` with respect to the input.
pub fn numerical_grad_input<F: Float>(
    x: &Array4<F>,
    eps: f64,
    mut loss: impl FnMut(&Array4<F>) -> f64,
) -> Array4<f64> {
    let mut grad = Array4::<f64>::zeros(x.dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = xp[idx];
        xp[idx] = orig + F::of(eps);
        let up = loss(&xp);
        xp[idx] = orig - F::of(eps);
        let down = loss(&xp);
        xp[idx] = orig;
        grad[idx] = (up - down) / (2.0 * eps);
    }
    grad
}

fn tensor_len<F: Float>(net: &mut Network<F>, t: usize) -> usize {
    let mut k = 0;
    let mut len = 0;
    visit_tensors_mut(&mut net.layers, "", &mut |_, data, _| {
        if k == t {
            len = data.len();
        }
        k += 1;
    });
    len
}

fn peek<F: Float>(net: &mut Network<F>, t: usize, i: usize) -> F {
    let mut k = 0;
    let mut v = F::zero();
    visit_tensors_mut(&mut net.layers, "", &mut |_, data, _| {
        if k == t {
            v = data[i];
        }
        k += 1;
    });
    v
}

fn poke<F: Float>(net: &mut Network<F>, t: usize, i: usize, v: F) {
    let mut k = 0;
    visit_tensors_mut(&mut net.layers, "", &mut |_, data, _| {
        if k == t {
            data[i] = v;
        }
        k += 1;
    });
}

/// Max relative error between an analytic and a numerical gradient,
/// with an absolute floor for near-zero entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs().max(n.abs()).max(floor)))
        .fold(0.0, f64::max)
}

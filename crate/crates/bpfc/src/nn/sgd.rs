//! SGD with momentum and weight decay.

use crate::float::Float;
use crate::nn::network::{GradSlot, GradStore, Layer, Network};

#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// `v <- momentum*v + g + wd*theta; theta <- theta - lr*v`.
    pub fn step<F: Float>(&self, net: &mut Network<F>, grads: &GradStore<F>, vel: &mut GradStore<F>) {
        let lr = F::of(self.lr);
        let mu = F::of(self.momentum);
        let wd = F::of(self.weight_decay);
        step_slots(&mut net.layers, &grads.slots, &mut vel.slots, lr, mu, wd);
    }
}

fn step_slots<F: Float>(
    layers: &mut [Layer<F>],
    grads: &[GradSlot<F>],
    vel: &mut [GradSlot<F>],
    lr: F,
    mu: F,
    wd: F,
) {
    for ((layer, g), v) in layers.iter_mut().zip(grads).zip(vel.iter_mut()) {
        match (layer, g, v) {
            (Layer::Conv(c), GradSlot::Conv { gw, gb }, GradSlot::Conv { gw: vw, gb: vb }) => {
                update(c.weight.as_slice_mut().unwrap(), gw.as_slice().unwrap(), vw.as_slice_mut().unwrap(), lr, mu, wd);
                update(c.bias.as_slice_mut().unwrap(), gb.as_slice().unwrap(), vb.as_slice_mut().unwrap(), lr, mu, wd);
            }
            (Layer::Dense(d), GradSlot::Dense { gw, gb }, GradSlot::Dense { gw: vw, gb: vb }) => {
                update(d.weight.as_slice_mut().unwrap(), gw.as_slice().unwrap(), vw.as_slice_mut().unwrap(), lr, mu, wd);
                update(d.bias.as_slice_mut().unwrap(), gb.as_slice().unwrap(), vb.as_slice_mut().unwrap(), lr, mu, wd);
            }
            (Layer::Bn(b), GradSlot::Bn { dgamma, dbeta }, GradSlot::Bn { dgamma: vg, dbeta: vbt }) => {
                update(b.gamma.as_slice_mut().unwrap(), dgamma.as_slice().unwrap(), vg.as_slice_mut().unwrap(), lr, mu, wd);
                update(b.beta.as_slice_mut().unwrap(), dbeta.as_slice().unwrap(), vbt.as_slice_mut().unwrap(), lr, mu, wd);
            }
            (Layer::Residual(r), GradSlot::Residual { body, shortcut }, GradSlot::Residual { body: vb, shortcut: vs }) => {
                step_slots(&mut r.body, body, vb, lr, mu, wd);
                step_slots(&mut r.shortcut, shortcut, vs, lr, mu, wd);
            }
            (_, GradSlot::None, GradSlot::None) => {}
            _ => panic!("optimizer state does not match network structure"),
        }
    }
}

fn update<F: Float>(theta: &mut [F], g: &[F], v: &mut [F], lr: F, mu: F, wd: F) {
    for i in 0..theta.len() {
        v[i] = mu * v[i] + g[i] + wd * theta[i];
        theta[i] = theta[i] - lr * v[i];
    }
}

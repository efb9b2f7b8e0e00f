//! Layer stack with explicit forward caches and backward passes.
//!
//! Models are sequences of [`Layer`]s; residual blocks nest their own
//! sequences. There is no tape or graph: each layer knows how to push a
//! gradient back through its cached forward state. This keeps the two
//! gradient consumers of the crate — parameter training and input-space
//! attacks — on the same code path.

use crate::float::Float;
use crate::nn::batchnorm::{BatchNorm2d, BnCache};
use crate::nn::conv::Conv2d;
use crate::nn::dense::Dense;
use crate::nn::pool::{global_avg_pool, global_avg_pool_backward, MaxPool2d};
use ndarray::{Array1, Array2, Array4, ArrayView4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Activation flowing between layers: feature map or flat matrix.
#[derive(Debug, Clone)]
pub enum Act<F> {
    Map(Array4<F>),
    Mat(Array2<F>),
}

impl<F: Float> Act<F> {
    pub fn map(self) -> Array4<F> {
        match self {
            Act::Map(a) => a,
            Act::Mat(_) => panic!("expected feature map"),
        }
    }
    pub fn mat(self) -> Array2<F> {
        match self {
            Act::Mat(a) => a,
            Act::Map(_) => panic!("expected matrix"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct ResidualBlock<F> {
    pub body: Vec<Layer<F>>,
    /// Empty means identity shortcut.
    pub shortcut: Vec<Layer<F>>,
}

#[derive(Debug, Clone)]
pub enum Layer<F> {
    Conv(Conv2d<F>),
    Bn(BatchNorm2d<F>),
    ReLU,
    Pool(MaxPool2d),
    Flatten,
    Dense(Dense<F>),
    Dropout(Dropout),
    GlobalAvgPool,
    Residual(ResidualBlock<F>),
}

pub enum LayerCache<F> {
    Conv { x: Array4<F> },
    Bn { bn: BnCache<F> },
    ReLU { y: Act<F> },
    Pool { arg: Array4<u32>, in_shape: (usize, usize, usize, usize) },
    Flatten { in_shape: (usize, usize, usize, usize) },
    Dense { x: Array2<F> },
    Dropout { mask: Option<Act<F>> },
    GlobalAvgPool { in_shape: (usize, usize, usize, usize) },
    Residual { body: Vec<LayerCache<F>>, shortcut: Vec<LayerCache<F>>, y: Array4<F> },
}

/// Gradient (or momentum-velocity) storage mirroring the layer structure.
#[derive(Debug, Clone)]
pub enum GradSlot<F> {
    Conv { gw: Array2<F>, gb: Array1<F> },
    Dense { gw: Array2<F>, gb: Array1<F> },
    Bn { dgamma: Array1<F>, dbeta: Array1<F> },
    Residual { body: Vec<GradSlot<F>>, shortcut: Vec<GradSlot<F>> },
    None,
}

#[derive(Debug, Clone)]
pub struct GradStore<F> {
    pub slots: Vec<GradSlot<F>>,
}

#[derive(Debug, Clone)]
pub struct Network<F> {
    pub layers: Vec<Layer<F>>,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
    pub arch_name: String,
}

impl<F: Float> Network<F> {
    /// Pre-softmax logits in inference mode, no caches retained.
    pub fn logits(&self, x: &ArrayView4<F>) -> Array2<F> {
        let (y, _) = forward_layers_eval(&self.layers, Act::Map(x.to_owned()), false);
        y.mat()
    }

    /// Inference-mode forward that keeps per-layer caches for a later
    /// backward pass (attack gradients).
    pub fn forward_eval(&self, x: &ArrayView4<F>) -> (Array2<F>, Vec<LayerCache<F>>) {
        let (y, caches) = forward_layers_eval(&self.layers, Act::Map(x.to_owned()), true);
        (y.mat(), caches.unwrap())
    }

    /// Training-mode forward: dropout masks drawn from `rng`, batch-norm
    /// running statistics updated.
    pub fn forward_train(
        &mut self,
        x: &ArrayView4<F>,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<F>, Vec<LayerCache<F>>) {
        let (y, caches) = forward_layers_train(&mut self.layers, Act::Map(x.to_owned()), rng);
        (y.mat(), caches)
    }

    /// Push `dlogits` back through cached state. Parameter gradients are
    /// accumulated into `grads` when given; the input gradient is
    /// returned when `need_dx` is set.
    pub fn backward(
        &self,
        caches: &[LayerCache<F>],
        dlogits: &Array2<F>,
        grads: Option<&mut GradStore<F>>,
        need_dx: bool,
    ) -> Option<Array4<F>> {
        let slots = grads.map(|g| &mut g.slots);
        backward_layers(&self.layers, caches, Act::Mat(dlogits.clone()), slots, need_dx)
            .map(Act::map)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        visit_tensors(&self.layers, "", &mut |_, data, _, trainable| {
            if trainable {
                n += data.len();
            }
        });
        n
    }

    /// Named copies of every tensor (weights, biases, BN affine and
    /// running statistics) for checkpoint I/O.
    pub fn tensors(&self) -> Vec<(String, Vec<F>, Vec<usize>)> {
        let mut out = Vec::new();
        visit_tensors(&self.layers, "", &mut |name, data, shape, _| {
            out.push((name.to_string(), data.to_vec(), shape.to_vec()));
        });
        out
    }

    pub fn load_tensors(&mut self, tensors: &[(String, Vec<F>, Vec<usize>)]) -> crate::Result<()> {
        use std::collections::HashMap;
        let mut by_name: HashMap<&str, (&[F], &[usize])> = tensors
            .iter()
            .map(|(n, d, s)| (n.as_str(), (d.as_slice(), s.as_slice())))
            .collect();
        let mut err = None;
        visit_tensors_mut(&mut self.layers, "", &mut |name, data, shape| {
            match by_name.remove(name) {
                Some((d, s)) if s == shape && d.len() == data.len() => {
                    data.copy_from_slice(d);
                }
                Some(_) => err = Some(format!("tensor {name} has wrong shape")),
                None => err = Some(format!("tensor {name} missing from checkpoint")),
            }
        });
        if let Some(e) = err {
            return Err(crate::Error::ShapeMismatch(e));
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(crate::Error::ShapeMismatch(format!(
                "checkpoint tensor {extra} has no home in arch {}",
                self.arch_name
            )));
        }
        Ok(())
    }
}

/// Walk every tensor: `f(name, data, shape, trainable)`.
pub fn visit_tensors<F: Float>(
    layers: &[Layer<F>],
    prefix: &str,
    f: &mut dyn FnMut(&str, &[F], &[usize], bool),
) {
    for (i, layer) in layers.iter().enumerate() {
        let name = |suffix: &str| format!("{prefix}{i}.{suffix}");
        match layer {
            Layer::Conv(c) => {
                f(&name("weight"), c.weight.as_slice().unwrap(), &[c.weight.nrows(), c.weight.ncols()], true);
                f(&name("bias"), c.bias.as_slice().unwrap(), &[c.bias.len()], true);
            }
            Layer::Dense(d) => {
                f(&name("weight"), d.weight.as_slice().unwrap(), &[d.weight.nrows(), d.weight.ncols()], true);
                f(&name("bias"), d.bias.as_slice().unwrap(), &[d.bias.len()], true);
            }
            Layer::Bn(b) => {
                f(&name("gamma"), b.gamma.as_slice().unwrap(), &[b.gamma.len()], true);
                f(&name("beta"), b.beta.as_slice().unwrap(), &[b.beta.len()], true);
                f(&name("running_mean"), b.running_mean.as_slice().unwrap(), &[b.running_mean.len()], false);
                f(&name("running_var"), b.running_var.as_slice().unwrap(), &[b.running_var.len()], false);
            }
            Layer::Residual(r) => {
                visit_tensors(&r.body, &format!("{prefix}{i}.body."), f);
                visit_tensors(&r.shortcut, &format!("{prefix}{i}.shortcut."), f);
            }
            _ => {}
        }
    }
}

/// Mutable counterpart of [`visit_tensors`]: `f(name, data, shape)`.
pub fn visit_tensors_mut<F: Float>(
    layers: &mut [Layer<F>],
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut [F], &[usize]),
) {
    for (i, layer) in layers.iter_mut().enumerate() {
        match layer {
            Layer::Conv(c) => {
                let shape = [c.weight.nrows(), c.weight.ncols()];
                f(&format!("{prefix}{i}.weight"), c.weight.as_slice_mut().unwrap(), &shape);
                let blen = [c.bias.len()];
                f(&format!("{prefix}{i}.bias"), c.bias.as_slice_mut().unwrap(), &blen);
            }
            Layer::Dense(d) => {
                let shape = [d.weight.nrows(), d.weight.ncols()];
                f(&format!("{prefix}{i}.weight"), d.weight.as_slice_mut().unwrap(), &shape);
                let blen = [d.bias.len()];
                f(&format!("{prefix}{i}.bias"), d.bias.as_slice_mut().unwrap(), &blen);
            }
            Layer::Bn(b) => {
                let n = [b.gamma.len()];
                f(&format!("{prefix}{i}.gamma"), b.gamma.as_slice_mut().unwrap(), &n);
                f(&format!("{prefix}{i}.beta"), b.beta.as_slice_mut().unwrap(), &n);
                f(&format!("{prefix}{i}.running_mean"), b.running_mean.as_slice_mut().unwrap(), &n);
                f(&format!("{prefix}{i}.running_var"), b.running_var.as_slice_mut().unwrap(), &n);
            }
            Layer::Residual(r) => {
                visit_tensors_mut(&mut r.body, &format!("{prefix}{i}.body."), f);
                visit_tensors_mut(&mut r.shortcut, &format!("{prefix}{i}.shortcut."), f);
            }
            _ => {}
        }
    }
}

pub fn zeros_like_grads<F: Float>(layers: &[Layer<F>]) -> Vec<GradSlot<F>> {
    layers
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => GradSlot::Conv {
                gw: Array2::zeros(c.weight.dim()),
                gb: Array1::zeros(c.bias.len()),
            },
            Layer::Dense(d) => GradSlot::Dense {
                gw: Array2::zeros(d.weight.dim()),
                gb: Array1::zeros(d.bias.len()),
            },
            Layer::Bn(b) => GradSlot::Bn {
                dgamma: Array1::zeros(b.gamma.len()),
                dbeta: Array1::zeros(b.beta.len()),
            },
            Layer::Residual(r) => GradSlot::Residual {
                body: zeros_like_grads(&r.body),
                shortcut: zeros_like_grads(&r.shortcut),
            },
            _ => GradSlot::None,
        })
        .collect()
}

impl<F: Float> GradStore<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        GradStore { slots: zeros_like_grads(&net.layers) }
    }

    pub fn zero(&mut self) {
        fn zero_slots<F: Float>(slots: &mut [GradSlot<F>]) {
            for s in slots {
                match s {
                    GradSlot::Conv { gw, gb } | GradSlot::Dense { gw, gb } => {
                        gw.fill(F::zero());
                        gb.fill(F::zero());
                    }
                    GradSlot::Bn { dgamma, dbeta } => {
                        dgamma.fill(F::zero());
                        dbeta.fill(F::zero());
                    }
                    GradSlot::Residual { body, shortcut } => {
                        zero_slots(body);
                        zero_slots(shortcut);
                    }
                    GradSlot::None => {}
                }
            }
        }
        zero_slots(&mut self.slots);
    }
}

fn forward_layers_eval<F: Float>(
    layers: &[Layer<F>],
    mut act: Act<F>,
    want_cache: bool,
) -> (Act<F>, Option<Vec<LayerCache<F>>>) {
    let mut caches = want_cache.then(Vec::new);
    for layer in layers {
        let (next, cache) = eval_one(layer, act, want_cache);
        act = next;
        if let Some(cs) = caches.as_mut() {
            cs.push(cache.expect("cache requested"));
        }
    }
    (act, caches)
}

fn eval_one<F: Float>(
    layer: &Layer<F>,
    act: Act<F>,
    want_cache: bool,
) -> (Act<F>, Option<LayerCache<F>>) {
    match layer {
        Layer::Conv(c) => {
            let x = act.map();
            let y = c.forward(&x.view());
            (Act::Map(y), want_cache.then(|| LayerCache::Conv { x }))
        }
        Layer::Bn(b) => {
            let x = act.map();
            let (y, bn) = b.forward_eval(&x.view());
            (Act::Map(y), want_cache.then(|| LayerCache::Bn { bn }))
        }
        Layer::ReLU => {
            let y = relu(act);
            let cache = want_cache.then(|| LayerCache::ReLU { y: y.clone() });
            (y, cache)
        }
        Layer::Pool(p) => {
            let x = act.map();
            let in_shape = x.dim();
            let (y, arg) = p.forward(&x.view());
            (Act::Map(y), want_cache.then(|| LayerCache::Pool { arg, in_shape }))
        }
        Layer::Flatten => {
            let x = act.map();
            let in_shape = x.dim();
            (Act::Mat(flatten(x)), want_cache.then(|| LayerCache::Flatten { in_shape }))
        }
        Layer::Dense(d) => {
            let x = act.mat();
            let y = d.forward(&x.view());
            (Act::Mat(y), want_cache.then(|| LayerCache::Dense { x }))
        }
        // Inference mode: dropout is the identity.
        Layer::Dropout(_) => (act, want_cache.then(|| LayerCache::Dropout { mask: None })),
        Layer::GlobalAvgPool => {
            let x = act.map();
            let in_shape = x.dim();
            let y = global_avg_pool(&x.view());
            (Act::Mat(y), want_cache.then(|| LayerCache::GlobalAvgPool { in_shape }))
        }
        Layer::Residual(r) => {
            let x = act.map();
            let (by, bc) = forward_layers_eval(&r.body, Act::Map(x.clone()), want_cache);
            let (sy, sc) = forward_layers_eval(&r.shortcut, Act::Map(x), want_cache);
            let mut y = by.map();
            y += &sy.map();
            y.mapv_inplace(|v| v.max(F::zero()));
            let cache = want_cache.then(|| LayerCache::Residual {
                body: bc.unwrap(),
                shortcut: sc.unwrap(),
                y: y.clone(),
            });
            (Act::Map(y), cache)
        }
    }
}

fn forward_layers_train<F: Float>(
    layers: &mut [Layer<F>],
    mut act: Act<F>,
    rng: &mut ChaCha8Rng,
) -> (Act<F>, Vec<LayerCache<F>>) {
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let (next, cache) = match layer {
            Layer::Bn(b) => {
                let x = act.map();
                let (y, bn) = b.forward_train(&x.view());
                (Act::Map(y), LayerCache::Bn { bn })
            }
            Layer::Dropout(d) => {
                let keep = 1.0 - d.p;
                let scale = F::of(1.0 / keep);
                let draw = |rng: &mut ChaCha8Rng| {
                    if rng.gen::<f64>() < keep {
                        scale
                    } else {
                        F::zero()
                    }
                };
                match act {
                    Act::Map(x) => {
                        let m = Array4::from_shape_simple_fn(x.dim(), || draw(rng));
                        (Act::Map(x * &m), LayerCache::Dropout { mask: Some(Act::Map(m)) })
                    }
                    Act::Mat(x) => {
                        let m = Array2::from_shape_simple_fn(x.dim(), || draw(rng));
                        (Act::Mat(x * &m), LayerCache::Dropout { mask: Some(Act::Mat(m)) })
                    }
                }
            }
            Layer::Residual(r) => {
                let x = act.map();
                let (by, bc) = forward_layers_train(&mut r.body, Act::Map(x.clone()), rng);
                let (sy, sc) = forward_layers_train(&mut r.shortcut, Act::Map(x), rng);
                let mut y = by.map();
                y += &sy.map();
                y.mapv_inplace(|v| v.max(F::zero()));
                let cache = LayerCache::Residual { body: bc, shortcut: sc, y: y.clone() };
                (Act::Map(y), cache)
            }
            other => {
                let (y, c) = eval_one(other, act, true);
                (y, c.unwrap())
            }
        };
        act = next;
        caches.push(cache);
    }
    (act, caches)
}

fn relu<F: Float>(act: Act<F>) -> Act<F> {
    match act {
        Act::Map(mut a) => {
            a.mapv_inplace(|v| v.max(F::zero()));
            Act::Map(a)
        }
        Act::Mat(mut a) => {
            a.mapv_inplace(|v| v.max(F::zero()));
            Act::Mat(a)
        }
    }
}

fn flatten<F: Float>(x: Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    if x.is_standard_layout() {
        x.into_shape_with_order((n, c * h * w)).unwrap()
    } else {
        let std = x.as_standard_layout().into_owned();
        std.into_shape_with_order((n, c * h * w)).unwrap()
    }
}

fn unflatten<F: Float>(x: Array2<F>, shape: (usize, usize, usize, usize)) -> Array4<F> {
    x.into_shape_with_order(shape).unwrap()
}

fn backward_layers<F: Float>(
    layers: &[Layer<F>],
    caches: &[LayerCache<F>],
    g_out: Act<F>,
    mut slots: Option<&mut Vec<GradSlot<F>>>,
    need_dx: bool,
) -> Option<Act<F>> {
    assert_eq!(layers.len(), caches.len());
    let mut g = g_out;
    for idx in (0..layers.len()).rev() {
        // The input gradient of the first layer is only needed when the
        // caller asked for dx; everything deeper must always propagate.
        let want_input = need_dx || idx > 0;
        let slot = slots.as_deref_mut().map(|s| &mut s[idx]);
        g = match (&layers[idx], &caches[idx]) {
            (Layer::Conv(c), LayerCache::Conv { x }) => {
                let gy = g.map();
                if let Some(GradSlot::Conv { gw, gb }) = slot {
                    let (dw, db) = c.grad_params(&x.view(), &gy.view());
                    *gw += &dw;
                    *gb += &db;
                }
                if !want_input {
                    return None;
                }
                Act::Map(c.grad_input(x.dim(), &gy.view()))
            }
            (Layer::Bn(b), LayerCache::Bn { bn }) => {
                let gy = g.map();
                let (dx, dg, db) = b.backward(bn, &gy.view());
                if let Some(GradSlot::Bn { dgamma, dbeta }) = slot {
                    *dgamma += &dg;
                    *dbeta += &db;
                }
                Act::Map(dx)
            }
            (Layer::ReLU, LayerCache::ReLU { y }) => mask_relu(g, y),
            (Layer::Pool(p), LayerCache::Pool { arg, in_shape }) => {
                let gy = g.map();
                Act::Map(p.backward(*in_shape, arg, &gy.view()))
            }
            (Layer::Flatten, LayerCache::Flatten { in_shape }) => {
                Act::Map(unflatten(g.mat(), *in_shape))
            }
            (Layer::Dense(d), LayerCache::Dense { x }) => {
                let gy = g.mat();
                if let Some(GradSlot::Dense { gw, gb }) = slot {
                    let (dw, db) = d.grad_params(&x.view(), &gy.view());
                    *gw += &dw;
                    *gb += &db;
                }
                if !want_input {
                    return None;
                }
                Act::Mat(d.grad_input(&gy.view()))
            }
            (Layer::Dropout(_), LayerCache::Dropout { mask }) => match mask {
                None => g,
                Some(Act::Map(m)) => Act::Map(g.map() * m),
                Some(Act::Mat(m)) => Act::Mat(g.mat() * m),
            },
            (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool { in_shape }) => {
                Act::Map(global_avg_pool_backward(*in_shape, &g.mat()))
            }
            (Layer::Residual(r), LayerCache::Residual { body, shortcut, y }) => {
                let gm = mask_relu(g, &Act::Map(y.clone())).map();
                let (bslots, sslots) = match slot {
                    Some(GradSlot::Residual { body, shortcut }) => (Some(body), Some(shortcut)),
                    _ => (None, None),
                };
                let bdx = backward_layers(&r.body, body, Act::Map(gm.clone()), bslots, true)
                    .expect("residual body gradient")
                    .map();
                // An empty shortcut backs the gradient through unchanged.
                let sdx = backward_layers(&r.shortcut, shortcut, Act::Map(gm), sslots, true)
                    .expect("residual shortcut gradient")
                    .map();
                Act::Map(bdx + sdx)
            }
            _ => panic!("layer/cache mismatch at index {idx}"),
        };
    }
    need_dx.then_some(g)
}

fn mask_relu<F: Float>(g: Act<F>, y: &Act<F>) -> Act<F> {
    match (g, y) {
        (Act::Map(mut gm), Act::Map(ym)) => {
            ndarray::Zip::from(&mut gm).and(ym).for_each(|gv, &yv| {
                if yv <= F::zero() {
                    *gv = F::zero();
                }
            });
            Act::Map(gm)
        }
        (Act::Mat(mut gm), Act::Mat(ym)) => {
            ndarray::Zip::from(&mut gm).and(ym).for_each(|gv, &yv| {
                if yv <= F::zero() {
                    *gv = F::zero();
                }
            });
            Act::Mat(gm)
        }
        _ => panic!("relu cache shape mismatch"),
    }
}

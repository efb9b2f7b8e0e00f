//! Architecture builders.
//!
//! M-LeNet and Net-A use unpadded ("valid") 5x5 convolutions; the
//! resulting feature maps are
//!
//!   M-LeNet: 28 -> 24 -> 20 -> pool 10 -> 6 -> 2 -> pool 1, so the
//!   512-unit FC layer sees a 64-channel 1x1 map (64 features);
//!   Net-A:   28 -> 24 -> 20, flattened to 64*20*20 = 25600 features.
//!
//! ResNet-18 is the usual 32x32 variant: a 3x3 stem, four stages of two
//! basic blocks (64/128/256/512 channels, stride 2 between stages),
//! global average pooling and a linear head.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::nn::batchnorm::BatchNorm2d;
use crate::nn::conv::Conv2d;
use crate::nn::dense::Dense;
use crate::nn::init::{he_normal_conv, he_normal_dense};
use crate::nn::network::{Dropout, Layer, Network, ResidualBlock};
use crate::nn::pool::MaxPool2d;
use crate::rng::substream;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchId {
    MLeNet,
    NetA,
    Resnet18,
}

impl ArchId {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "m-lenet" | "mlenet" => Ok(ArchId::MLeNet),
            "net-a" | "neta" => Ok(ArchId::NetA),
            "resnet18" | "resnet-18" => Ok(ArchId::Resnet18),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchId::MLeNet => "m-lenet",
            ArchId::NetA => "net-a",
            ArchId::Resnet18 => "resnet18",
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            ArchId::MLeNet | ArchId::NetA => (1, 28, 28),
            ArchId::Resnet18 => (3, 32, 32),
        }
    }
}

pub fn build_network<F: Float>(arch: ArchId, seed: u64) -> Network<F> {
    match arch {
        ArchId::MLeNet => build_m_lenet(seed),
        ArchId::NetA => build_net_a(seed),
        ArchId::Resnet18 => build_resnet18(seed),
    }
}

fn conv<F: Float>(
    rng: &mut ChaCha8Rng,
    ic: usize,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Layer<F> {
    let mut c = Conv2d::new(ic, oc, (k, k), stride, pad);
    he_normal_conv(&mut c, rng);
    Layer::Conv(c)
}

fn dense<F: Float>(rng: &mut ChaCha8Rng, i: usize, o: usize) -> Layer<F> {
    let mut d = Dense::new(i, o);
    he_normal_dense(&mut d, rng);
    Layer::Dense(d)
}

/// Modified LeNet: {conv(32,5,5)+ReLU}x2, pool, {conv(64,5,5)+ReLU}x2,
/// pool, FC(512)+ReLU, FC(10).
pub fn build_m_lenet<F: Float>(seed: u64) -> Network<F> {
    let mut rng = substream(seed, "init");
    let r = &mut rng;
    let layers = vec![
        conv(r, 1, 32, 5, 1, 0),
        Layer::ReLU,
        conv(r, 32, 32, 5, 1, 0),
        Layer::ReLU,
        Layer::Pool(MaxPool2d::new(2, 2)),
        conv(r, 32, 64, 5, 1, 0),
        Layer::ReLU,
        conv(r, 64, 64, 5, 1, 0),
        Layer::ReLU,
        Layer::Pool(MaxPool2d::new(2, 2)),
        Layer::Flatten,
        dense(r, 64, 512),
        Layer::ReLU,
        dense(r, 512, 10),
    ];
    Network {
        layers,
        input_shape: (1, 28, 28),
        class_count: 10,
        arch_name: ArchId::MLeNet.name().to_string(),
    }
}

/// Net-A (black-box source): Conv(64,5,5)+ReLU, Conv(64,5,5)+ReLU,
/// Dropout(0.25), FC(128)+ReLU, Dropout(0.5), FC(10).
pub fn build_net_a<F: Float>(seed: u64) -> Network<F> {
    let mut rng = substream(seed, "init");
    let r = &mut rng;
    let layers = vec![
        conv(r, 1, 64, 5, 1, 0),
        Layer::ReLU,
        conv(r, 64, 64, 5, 1, 0),
        Layer::ReLU,
        Layer::Dropout(Dropout { p: 0.25 }),
        Layer::Flatten,
        dense(r, 64 * 20 * 20, 128),
        Layer::ReLU,
        Layer::Dropout(Dropout { p: 0.5 }),
        dense(r, 128, 10),
    ];
    Network {
        layers,
        input_shape: (1, 28, 28),
        class_count: 10,
        arch_name: ArchId::NetA.name().to_string(),
    }
}

fn basic_block<F: Float>(
    rng: &mut ChaCha8Rng,
    ic: usize,
    oc: usize,
    stride: usize,
) -> Layer<F> {
    let body = vec![
        conv(rng, ic, oc, 3, stride, 1),
        Layer::Bn(BatchNorm2d::new(oc)),
        Layer::ReLU,
        conv(rng, oc, oc, 3, 1, 1),
        Layer::Bn(BatchNorm2d::new(oc)),
    ];
    let shortcut = if stride != 1 || ic != oc {
        vec![conv(rng, ic, oc, 1, stride, 0), Layer::Bn(BatchNorm2d::new(oc))]
    } else {
        Vec::new()
    };
    Layer::Residual(ResidualBlock { body, shortcut })
}

/// ResNet-18 for 32x32 inputs, ~11.2M parameters.
pub fn build_resnet18<F: Float>(seed: u64) -> Network<F> {
    let mut rng = substream(seed, "init");
    let r = &mut rng;
    let mut layers = vec![
        conv(r, 3, 64, 3, 1, 1),
        Layer::Bn(BatchNorm2d::new(64)),
        Layer::ReLU,
    ];
    let stages = [(64, 64, 1), (64, 128, 2), (128, 256, 2), (256, 512, 2)];
    for (ic, oc, stride) in stages {
        layers.push(basic_block(r, ic, oc, stride));
        layers.push(basic_block(r, oc, oc, 1));
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(dense(r, 512, 10));
    Network {
        layers,
        input_shape: (3, 32, 32),
        class_count: 10,
        arch_name: ArchId::Resnet18.name().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Classifier;
    use ndarray::Array4;

    #[test]
    fn m_lenet_shapes_and_softmax() {
        let net = build_m_lenet::<f32>(1);
        let x = Array4::from_elem((4, 1, 28, 28), 0.5f32);
        let logits = net.logits(&x.view());
        assert_eq!(logits.dim(), (4, 10));
        let p = net.probs(&x.view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn net_a_eval_is_deterministic() {
        let net = build_net_a::<f32>(2);
        let x = Array4::from_elem((2, 1, 28, 28), 0.3f32);
        let a = net.logits(&x.view());
        let b = net.logits(&x.view());
        assert_eq!(a, b, "dropout must be inactive in eval mode");
    }

    #[test]
    fn resnet18_param_count_near_11m() {
        let net = build_resnet18::<f32>(3);
        let count = net.param_count() as f64;
        assert!(
            (count - 11.2e6).abs() / 11.2e6 < 0.02,
            "parameter count {count} not ~11.2M"
        );
    }

    #[test]
    fn argmax_invariant_to_logit_shift() {
        let net = build_resnet18::<f32>(4);
        let x = Array4::from_elem((2, 3, 32, 32), 0.25f32);
        let l = net.logits(&x.view());
        let pred = crate::nn::loss::predictions(&l.view());
        let shifted = &l + 3.7f32;
        let pred2 = crate::nn::loss::predictions(&shifted.view());
        assert_eq!(pred, pred2);
    }
}

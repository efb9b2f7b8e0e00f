//! Fully connected layer.

use crate::float::Float;
use crate::nn::linalg::matmul;
use ndarray::{Array1, Array2, ArrayView2, Axis};

#[derive(Debug, Clone)]
pub struct Dense<F> {
    /// (in_features, out_features)
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Float> Dense<F> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Dense {
            weight: Array2::zeros((in_features, out_features)),
            bias: Array1::zeros(out_features),
        }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut y = matmul(x.view(), self.weight.view());
        for mut r in y.axis_iter_mut(Axis(0)) {
            r += &self.bias;
        }
        y
    }

    pub fn grad_params(&self, x: &ArrayView2<F>, gy: &ArrayView2<F>) -> (Array2<F>, Array1<F>) {
        (matmul(x.t(), gy.view()), gy.sum_axis(Axis(0)))
    }

    pub fn grad_input(&self, gy: &ArrayView2<F>) -> Array2<F> {
        matmul(gy.view(), self.weight.t())
    }
}

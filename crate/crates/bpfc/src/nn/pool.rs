//! Max pooling and global average pooling.

use crate::float::Float;
use ndarray::{Array2, Array4, ArrayView4};

#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub size: usize,
    pub stride: usize,
}

impl MaxPool2d {
    pub fn new(size: usize, stride: usize) -> Self {
        MaxPool2d { size, stride }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - self.size) / self.stride + 1, (w - self.size) / self.stride + 1)
    }

    /// Returns the pooled map and, per output cell, the flat (h*w) index
    /// of the winning input pixel.
    pub fn forward<F: Float>(&self, x: &ArrayView4<F>) -> (Array4<F>, Array4<u32>) {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let mut y = Array4::<F>::zeros((n, c, oh, ow));
        let mut arg = Array4::<u32>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                let plane = x.index_axis(ndarray::Axis(0), ni);
                let plane = plane.index_axis(ndarray::Axis(0), ci);
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = F::neg_infinity();
                        let mut bidx = 0u32;
                        for u in 0..self.size {
                            for v in 0..self.size {
                                let ih = i * self.stride + u;
                                let iw = j * self.stride + v;
                                let val = plane[[ih, iw]];
                                if val > best {
                                    best = val;
                                    bidx = (ih * w + iw) as u32;
                                }
                            }
                        }
                        y[[ni, ci, i, j]] = best;
                        arg[[ni, ci, i, j]] = bidx;
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn backward<F: Float>(
        &self,
        in_shape: (usize, usize, usize, usize),
        arg: &Array4<u32>,
        gy: &ArrayView4<F>,
    ) -> Array4<F> {
        let (n, c, _h, w) = in_shape;
        let mut dx = Array4::<F>::zeros(in_shape);
        let (_, _, oh, ow) = gy.dim();
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let flat = arg[[ni, ci, i, j]] as usize;
                        let (ih, iw) = (flat / w, flat % w);
                        dx[[ni, ci, ih, iw]] = dx[[ni, ci, ih, iw]] + gy[[ni, ci, i, j]];
                    }
                }
            }
        }
        dx
    }
}

/// Mean over the spatial dimensions: (N, C, H, W) -> (N, C).
pub fn global_avg_pool<F: Float>(x: &ArrayView4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let scale = F::of(1.0 / (h * w) as f64);
    let mut y = Array2::<F>::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = F::zero();
            for i in 0..h {
                for j in 0..w {
                    acc = acc + x[[ni, ci, i, j]];
                }
            }
            y[[ni, ci]] = acc * scale;
        }
    }
    y
}

pub fn global_avg_pool_backward<F: Float>(
    in_shape: (usize, usize, usize, usize),
    gy: &Array2<F>,
) -> Array4<F> {
    let (n, c, h, w) = in_shape;
    let scale = F::of(1.0 / (h * w) as f64);
    let mut dx = Array4::<F>::zeros(in_shape);
    for ni in 0..n {
        for ci in 0..c {
            let g = gy[[ni, ci]] * scale;
            for i in 0..h {
                for j in 0..w {
                    dx[[ni, ci, i, j]] = g;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pool_picks_max_and_routes_gradient() {
        let x = array![[[[1.0f64, 2.0], [3.0, 4.0]]]];
        let p = MaxPool2d::new(2, 2);
        let (y, arg) = p.forward(&x.view());
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        let gy = array![[[[5.0f64]]]];
        let dx = p.backward((1, 1, 2, 2), &arg, &gy.view());
        assert_eq!(dx, array![[[[0.0, 0.0], [0.0, 5.0]]]]);
    }
}

//! 2-D convolution via im2col + GEMM, with explicit backward passes.

use crate::float::Float;
use crate::nn::linalg::matmul;
use ndarray::{Array1, Array2, Array4, ArrayView4, Axis};

#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// (out_channels, in_channels * kh * kw)
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
}

impl<F: Float> Conv2d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            weight: Array2::zeros((out_channels, in_channels * kernel.0 * kernel.1)),
            bias: Array1::zeros(out_channels),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel.0) / self.stride + 1,
            (w + 2 * self.pad - self.kernel.1) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &ArrayView4<F>) -> Array4<F> {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let col = im2col(x, self.kernel, self.stride, self.pad);
        let mut rows = matmul(col.view(), self.weight.t());
        for mut r in rows.axis_iter_mut(Axis(0)) {
            r += &self.bias;
        }
        rows_to_map(rows, n, oh, ow, self.out_channels)
    }

    /// Parameter gradients. `gy` is the loss gradient at the output map.
    pub fn grad_params(&self, x: &ArrayView4<F>, gy: &ArrayView4<F>) -> (Array2<F>, Array1<F>) {
        let col = im2col(x, self.kernel, self.stride, self.pad);
        let gy_rows = map_to_rows(gy);
        let gw = matmul(gy_rows.t(), col.view());
        let gb = gy_rows.sum_axis(Axis(0));
        (gw, gb)
    }

    /// Input gradient. Uses a full-convolution GEMM when stride is 1
    /// (much better shaped for BLAS) and col2im scatter otherwise.
    pub fn grad_input(&self, in_shape: (usize, usize, usize, usize), gy: &ArrayView4<F>) -> Array4<F> {
        if self.stride == 1 {
            self.grad_input_fullconv(in_shape, gy)
        } else {
            self.grad_input_col2im(in_shape, gy)
        }
    }

    fn grad_input_fullconv(
        &self,
        in_shape: (usize, usize, usize, usize),
        gy: &ArrayView4<F>,
    ) -> Array4<F> {
        let (n, c, h, w) = in_shape;
        let (kh, kw) = self.kernel;
        // Flip the kernel spatially and swap in/out channel roles:
        // wf[c][o, u, v] = w[o][c, kh-1-u, kw-1-v].
        let mut wf = Array2::zeros((c, self.out_channels * kh * kw));
        for o in 0..self.out_channels {
            for ci in 0..c {
                for u in 0..kh {
                    for v in 0..kw {
                        wf[[ci, (o * kh + u) * kw + v]] =
                            self.weight[[o, (ci * kh + (kh - 1 - u)) * kw + (kw - 1 - v)]];
                    }
                }
            }
        }
        // Convolving gy with the flipped kernel at pad kh-1 yields the
        // gradient of the zero-padded input; crop `pad` to recover dx.
        let colg = im2col(gy, (kh, kw), 1, kh - 1);
        let rows = matmul(colg.view(), wf.t());
        let full = rows_to_map(rows, n, h + 2 * self.pad, w + 2 * self.pad, c);
        if self.pad == 0 {
            full
        } else {
            full.slice(ndarray::s![
                ..,
                ..,
                self.pad..self.pad + h,
                self.pad..self.pad + w
            ])
            .to_owned()
        }
    }

    fn grad_input_col2im(
        &self,
        in_shape: (usize, usize, usize, usize),
        gy: &ArrayView4<F>,
    ) -> Array4<F> {
        let gy_rows = map_to_rows(gy);
        let dcol = matmul(gy_rows.view(), self.weight.view());
        col2im(&dcol, in_shape, self.kernel, self.stride, self.pad)
    }
}

/// (N, C, H, W) -> (N*OH*OW, C*KH*KW), zero padding outside the image.
pub fn im2col<F: Float>(
    x: &ArrayView4<F>,
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let (kh, kw) = kernel;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let k = c * kh * kw;
    let mut col = Array2::<F>::zeros((n * oh * ow, k));
    let xs = x.as_standard_layout();
    let xsl = xs.as_slice().unwrap();
    let cs = col.as_slice_mut().unwrap();
    for ni in 0..n {
        for ohi in 0..oh {
            for owi in 0..ow {
                let row = ((ni * oh + ohi) * ow + owi) * k;
                let ih0 = (ohi * stride) as isize - pad as isize;
                let iw0 = (owi * stride) as isize - pad as isize;
                for ci in 0..c {
                    let base = ((ni * c) + ci) * h * w;
                    for u in 0..kh {
                        let ih = ih0 + u as isize;
                        let dst = row + (ci * kh + u) * kw;
                        if ih < 0 || ih >= h as isize {
                            continue; // stays zero
                        }
                        let src = base + ih as usize * w;
                        for v in 0..kw {
                            let iw = iw0 + v as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            cs[dst + v] = xsl[src + iw as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Inverse of im2col: scatter-add column gradients back onto the image.
pub fn col2im<F: Float>(
    dcol: &Array2<F>,
    in_shape: (usize, usize, usize, usize),
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (n, c, h, w) = in_shape;
    let (kh, kw) = kernel;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let k = c * kh * kw;
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let ds = dcol.as_slice().unwrap();
    let xs = dx.as_slice_mut().unwrap();
    for ni in 0..n {
        for ohi in 0..oh {
            for owi in 0..ow {
                let row = ((ni * oh + ohi) * ow + owi) * k;
                let ih0 = (ohi * stride) as isize - pad as isize;
                let iw0 = (owi * stride) as isize - pad as isize;
                for ci in 0..c {
                    let base = ((ni * c) + ci) * h * w;
                    for u in 0..kh {
                        let ih = ih0 + u as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let srcrow = row + (ci * kh + u) * kw;
                        let dst = base + ih as usize * w;
                        for v in 0..kw {
                            let iw = iw0 + v as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            xs[dst + iw as usize] = xs[dst + iw as usize] + ds[srcrow + v];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// (N*OH*OW, OC) row matrix -> (N, OC, OH, OW) feature map.
pub fn rows_to_map<F: Float>(rows: Array2<F>, n: usize, oh: usize, ow: usize, oc: usize) -> Array4<F> {
    let y = rows.into_shape_with_order((n, oh, ow, oc)).unwrap();
    let mut out = Array4::<F>::zeros((n, oc, oh, ow));
    out.assign(&y.permuted_axes([0, 3, 1, 2]));
    out
}

/// (N, OC, OH, OW) feature map -> (N*OH*OW, OC) row matrix.
pub fn map_to_rows<F: Float>(gy: &ArrayView4<F>) -> Array2<F> {
    let (n, oc, oh, ow) = gy.dim();
    let perm = gy.view().permuted_axes([0, 2, 3, 1]);
    let std = perm.as_standard_layout().into_owned();
    std.into_shape_with_order((n * oh * ow, oc)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn naive_conv(
        x: &Array4<f64>,
        w: &Array2<f64>,
        b: &Array1<f64>,
        oc: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (kh, kw) = kernel;
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut y = Array4::<f64>::zeros((n, oc, oh, ow));
        for ni in 0..n {
            for o in 0..oc {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let ih = (i * stride + u) as isize - pad as isize;
                                    let iw = (j * stride + v) as isize - pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd
                                    {
                                        acc += w[[o, (ci * kh + u) * kw + v]]
                                            * x[[ni, ci, ih as usize, iw as usize]];
                                    }
                                }
                            }
                        }
                        y[[ni, o, i, j]] = acc;
                    }
                }
            }
        }
        y
    }

    fn rand_array4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, "conv-test");
        Array::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn forward_matches_naive_with_padding_and_stride() {
        for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1), (2, 0)] {
            let mut conv = Conv2d::<f64>::new(3, 4, (3, 3), stride, pad);
            conv.weight = Array::from_shape_fn(conv.weight.dim(), |(i, j)| {
                ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.5
            });
            conv.bias = Array::from_shape_fn(4, |i| i as f64 * 0.1);
            let x = rand_array4((2, 3, 7, 8), 1 + stride as u64 * 10 + pad as u64);
            let y = conv.forward(&x.view());
            let y_ref = naive_conv(&x, &conv.weight, &conv.bias, 4, (3, 3), stride, pad);
            let diff = (&y - &y_ref).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
            assert!(diff < 1e-12, "stride={stride} pad={pad} diff={diff}");
        }
    }

    #[test]
    fn input_grad_paths_agree() {
        // The full-convolution shortcut must equal the col2im scatter.
        let mut conv = Conv2d::<f64>::new(2, 5, (5, 5), 1, 2);
        conv.weight = Array::from_shape_fn(conv.weight.dim(), |(i, j)| {
            ((i * 17 + j * 3) % 11) as f64 / 11.0 - 0.4
        });
        let in_shape = (3, 2, 9, 9);
        let (oh, ow) = conv.out_hw(9, 9);
        let gy = rand_array4((3, 5, oh, ow), 42);
        let a = conv.grad_input_fullconv(in_shape, &gy.view());
        let b = conv.grad_input_col2im(in_shape, &gy.view());
        let diff = (&a - &b).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(diff < 1e-10, "diff={diff}");
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for random x, c.
        let x = rand_array4((2, 3, 6, 6), 7);
        let kernel = (3, 3);
        let (stride, pad) = (2, 1);
        let col = im2col(&x.view(), kernel, stride, pad);
        let c = Array2::from_shape_fn(col.dim(), |(i, j)| ((i + 2 * j) % 7) as f64 - 3.0);
        let lhs: f64 = (&col * &c).sum();
        let back = col2im(&c, x.dim(), kernel, stride, pad);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}

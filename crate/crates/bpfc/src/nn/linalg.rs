//! Matrix-multiply front end.
//!
//! All GEMMs go through [`matmul`] so the backend stays swappable in one
//! place. The backend is ndarray's threaded matrixmultiply, which
//! dispatches SIMD kernels at runtime and assigns each output element to
//! exactly one thread, so results are bitwise reproducible.

use crate::float::Float;
use ndarray::{Array2, ArrayView2};

/// No-op hook kept for binaries that want to pin numeric settings before
/// the first kernel runs.
pub fn init_blas_tuning() {}

/// `a · b`. Views with arbitrary strides are fine; no copies are made.
pub fn matmul<F: Float>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
    a.dot(&b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_matches_by_hand() {
        let a = array![[1.0f64, 2.0], [3.0, 4.0]];
        let b = array![[5.0, 6.0], [7.0, 8.0]];
        let c = matmul(a.view(), b.view());
        assert_eq!(c, array![[19.0, 22.0], [43.0, 50.0]]);
    }

    #[test]
    fn transposed_views_work() {
        let a = array![[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let c = matmul(a.t(), a.view());
        assert_eq!(c.dim(), (3, 3));
        assert!((c[[0, 0]] - 17.0).abs() < 1e-6);
    }
}

//! Scalar abstraction: the whole crate is generic over `f32`/`f64`.

use rand::distributions::uniform::SampleUniform;

/// Floating-point scalar usable in every numeric routine of this crate.
///
/// Implemented for `f32` and `f64` only. `f32` is the training/evaluation
/// type (BLAS-backed); `f64` exists so finite-difference gradient checks
/// can run at full precision.
pub trait Float:
    ndarray::NdFloat + num_traits::FromPrimitive + SampleUniform + Default + 'static
{
    /// Lossy conversion from `f64`, for literals and hyperparameters.
    fn of(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("finite literal")
    }

    /// Lossless-enough conversion to `f64` for reporting.
    fn to_f64(self) -> f64;
}

impl Float for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

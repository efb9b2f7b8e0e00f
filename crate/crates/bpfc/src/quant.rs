//! Stochastic bit-plane coarsening.
//!
//! Pixels live in [0,1]; the quantizer rescales to the integer intensity
//! domain [0, 2^n), applies the four-step pipeline (pre-quantization
//! noise, quantize, range shift, clip) and rescales back. Working on the
//! continuous rescaled value keeps the pipeline usable on attack
//! iterates, which are not on the 8-bit grid.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::rng::substream_indexed;
use ndarray::{Array4, ArrayView4};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    /// Uniform noise U(-2^{k-2}, 2^{k-2}) before quantizing.
    Stochastic,
    /// No pre-quantization noise (ablation A1).
    Simple,
    /// Additive uniform noise instead of quantization (ablation A2).
    UniformNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    /// Total bit depth n of the source images.
    pub bit_depth: u8,
    /// Number of low bits k dropped by the quantization step.
    pub dropped_bits: u8,
    pub mode: QuantMode,
}

impl QuantConfig {
    pub fn new(bit_depth: u8, dropped_bits: u8, mode: QuantMode) -> Result<Self> {
        let cfg = QuantConfig { bit_depth, dropped_bits, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bit_depth == 0 || self.bit_depth > 16 {
            return Err(Error::InvalidQuant(format!(
                "bit depth n={} out of range",
                self.bit_depth
            )));
        }
        // k must lie in [1, n-1].
        if self.dropped_bits < 1 || self.dropped_bits > self.bit_depth - 1 {
            return Err(Error::InvalidQuant(format!(
                "dropped bits k={} not in [1, {}]",
                self.dropped_bits,
                self.bit_depth - 1
            )));
        }
        Ok(())
    }

    /// Largest representable intensity, 2^n - 1.
    pub fn max_intensity(&self) -> f64 {
        (1u32 << self.bit_depth) as f64 - 1.0
    }

    /// Half-width of the pre-quantization noise, 2^{k-2}.
    pub fn noise_half_width(&self) -> f64 {
        2f64.powi(self.dropped_bits as i32 - 2)
    }

    /// Bin width of the quantization step, 2^k.
    pub fn bin_width(&self) -> f64 {
        (1u32 << self.dropped_bits) as f64
    }

    /// Range shift applied after flooring, 2^{k-1}.
    pub fn range_shift(&self) -> f64 {
        (1u32 << (self.dropped_bits - 1)) as f64
    }
}

/// Floor-mod: result in [0, m) for any sign of a.
fn floor_mod<F: Float>(a: F, m: F) -> F {
    a - m * (a / m).floor()
}

/// One pixel through noise/quantize/shift/clip, in the integer intensity
/// domain. `noise` is the realized pre-quantization noise u.
pub fn quantize_intensity<F: Float>(v: F, noise: F, cfg: &QuantConfig) -> F {
    let bin = F::of(cfg.bin_width());
    let shift = F::of(cfg.range_shift());
    let top = F::of(cfg.max_intensity());
    let pre = v + noise;
    let q = pre - floor_mod(pre, bin) + shift;
    q.max(F::zero()).min(top)
}

/// Quantize a pixel batch in [0,1]. Deterministic for a given
/// `noise_seed`; each call is an independent noise draw.
pub fn quantize_batch<F: Float>(
    x: &ArrayView4<F>,
    cfg: &QuantConfig,
    noise_seed: u64,
) -> Result<Array4<F>> {
    Ok(quantize_batch_with_mask(x, cfg, noise_seed)?.0)
}

/// As [`quantize_batch`], also returning the straight-through gradient
/// mask: 1 where the output was not clipped, 0 where it was.
pub fn quantize_batch_with_mask<F: Float>(
    x: &ArrayView4<F>,
    cfg: &QuantConfig,
    noise_seed: u64,
) -> Result<(Array4<F>, Array4<F>)> {
    cfg.validate()?;
    let scale = F::of(cfg.max_intensity());
    let inv = F::one() / scale;
    let mut rng = substream_indexed(noise_seed, "quant-noise", 0);
    let mut out = Array4::<F>::zeros(x.dim());
    let mut mask = Array4::<F>::ones(x.dim());

    match cfg.mode {
        QuantMode::Stochastic | QuantMode::Simple => {
            let hw = cfg.noise_half_width();
            ndarray::Zip::from(&mut out)
                .and(&mut mask)
                .and(x)
                .for_each(|o, m, &xi| {
                    let u = if cfg.mode == QuantMode::Stochastic {
                        F::of(rng.gen_range(-hw..hw))
                    } else {
                        F::zero()
                    };
                    let v = xi * scale;
                    let pre = v + u;
                    let bin = F::of(cfg.bin_width());
                    let q = pre - floor_mod(pre, bin) + F::of(cfg.range_shift());
                    let clipped = q < F::zero() || q > scale;
                    *m = if clipped { F::zero() } else { F::one() };
                    *o = q.max(F::zero()).min(scale) * inv;
                });
        }
        QuantMode::UniformNoise => {
            // Noise magnitude matches the post-shift quantization-error
            // range, +-2^{k-1}.
            let hw = cfg.range_shift();
            ndarray::Zip::from(&mut out)
                .and(&mut mask)
                .and(x)
                .for_each(|o, m, &xi| {
                    let v = xi * scale + F::of(rng.gen_range(-hw..hw));
                    let clipped = v < F::zero() || v > scale;
                    *m = if clipped { F::zero() } else { F::one() };
                    *o = v.max(F::zero()).min(scale) * inv;
                });
        }
    }
    Ok((out, mask))
}

/// Monte-Carlo estimate of P[quantize(v) = q_level] under stochastic
/// noise, with its standard error. Intensities are in the integer domain.
pub fn bin_assignment_probability(
    v: f64,
    q_level: f64,
    cfg: &QuantConfig,
    trials: u32,
    seed: u64,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if cfg.mode != QuantMode::Stochastic {
        return Err(Error::InvalidQuant(
            "bin-assignment probability is defined for stochastic mode".into(),
        ));
    }
    if trials == 0 {
        return Err(Error::InvalidQuant("trials must be >= 1".into()));
    }
    // Valid levels have the form m*2^k + 2^{k-1} inside [0, 2^n - 1].
    let bin = cfg.bin_width();
    let m = (q_level - cfg.range_shift()) / bin;
    if m.fract() != 0.0 || q_level < 0.0 || q_level > cfg.max_intensity() {
        return Err(Error::InvalidQuant(format!(
            "{q_level} is not a quantization level for k={}",
            cfg.dropped_bits
        )));
    }
    let hw = cfg.noise_half_width();
    let mut rng = substream_indexed(seed, "bin-prob", 0);
    let mut hits = 0u64;
    for _ in 0..trials {
        let u = rng.gen_range(-hw..hw);
        if quantize_intensity(v, u, cfg) == q_level {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    Ok((p, se))
}

/// Reconstruct images from a subset of bit planes. Plane `n-1` is the
/// most significant. An empty set yields zeros.
pub fn bit_planes<F: Float>(
    x: &ArrayView4<F>,
    plane_set: &[u8],
    bit_depth: u8,
) -> Result<Array4<F>> {
    for &p in plane_set {
        if p >= bit_depth {
            return Err(Error::InvalidQuant(format!(
                "bit plane {p} out of range for {bit_depth}-bit images"
            )));
        }
    }
    let mut plane_mask = 0u32;
    for &p in plane_set {
        plane_mask |= 1 << p;
    }
    let scale = F::of((1u32 << bit_depth) as f64 - 1.0);
    let half = F::of(0.5);
    let out = x.mapv(|xi| {
        let v = (xi * scale + half).floor().to_f64() as u32;
        F::of((v & plane_mask) as f64) / scale
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn cfg(n: u8, k: u8, mode: QuantMode) -> QuantConfig {
        QuantConfig::new(n, k, mode).unwrap()
    }

    fn q85(v: f64, u: f64) -> f64 {
        quantize_intensity(v, u, &cfg(8, 5, QuantMode::Stochastic)).to_f64()
    }

    #[test]
    fn scalar_pipeline_hand_examples() {
        // n=8, k=5 worked examples.
        assert_eq!(q85(48.0, 0.0), 48.0); // bin-center fixed point
        assert_eq!(q85(100.0, 5.0), 112.0); // 105 -> 96 -> 112
        assert_eq!(q85(250.0, 7.0), 255.0); // 257 -> 256 -> 272 -> clip
        assert_eq!(q85(3.0, -8.0), 0.0); // -5 -> -32 -> -16 -> clip
    }

    #[test]
    fn invalid_k_is_rejected() {
        assert!(QuantConfig::new(8, 0, QuantMode::Stochastic).is_err());
        assert!(QuantConfig::new(8, 8, QuantMode::Stochastic).is_err());
        assert!(QuantConfig::new(8, 7, QuantMode::Stochastic).is_ok());
    }

    #[test]
    fn simple_mode_is_idempotent() {
        let c = cfg(8, 5, QuantMode::Simple);
        let x = Array4::from_shape_fn((1, 1, 16, 16), |(_, _, i, j)| {
            ((i * 16 + j) as f32) / 255.0
        });
        let q1 = quantize_batch(&x.view(), &c, 0).unwrap();
        let q2 = quantize_batch(&q1.view(), &c, 1).unwrap();
        let diff = (&q1 - &q2)
            .mapv(f32::abs)
            .iter()
            .cloned()
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-6, "diff={diff}");
    }

    #[test]
    fn deterministic_given_seed() {
        let c = cfg(8, 5, QuantMode::Stochastic);
        let x = Array4::from_elem((2, 1, 4, 4), 0.37f32);
        let a = quantize_batch(&x.view(), &c, 99).unwrap();
        let b = quantize_batch(&x.view(), &c, 99).unwrap();
        assert_eq!(a, b);
        let c2 = quantize_batch(&x.view(), &c, 100).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn bin_probability_matches_interval_measure() {
        let c = cfg(8, 5, QuantMode::Stochastic);
        // Noise support [-8, 8) inside bin [64, 96): always level 80.
        let (p, _) = bin_assignment_probability(80.0, 80.0, &c, 20000, 7).unwrap();
        assert_eq!(p, 1.0);
        // Exactly half the support falls below 96.
        let (p, se) = bin_assignment_probability(96.0, 80.0, &c, 20000, 7).unwrap();
        assert!((p - 0.5).abs() < 4.0 * se + 0.01, "p={p}");
        // Support cannot reach below 96.
        let (p, _) = bin_assignment_probability(104.0, 80.0, &c, 20000, 7).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn bin_probability_rejects_non_levels() {
        let c = cfg(8, 5, QuantMode::Stochastic);
        assert!(bin_assignment_probability(80.0, 79.0, &c, 10, 0).is_err());
        assert!(bin_assignment_probability(80.0, 300.0, &c, 10, 0).is_err());
    }

    #[test]
    fn bit_plane_reconstruction() {
        let x = Array4::from_elem((1, 1, 1, 1), 200.0f64 / 255.0);
        // Full set reproduces the input.
        let full: Vec<u8> = (0..8).collect();
        let y = bit_planes(&x.view(), &full, 8).unwrap();
        assert!((y[[0, 0, 0, 0] ] - 200.0 / 255.0).abs() < 1e-12);
        // Empty set is all zeros.
        let z = bit_planes(&x.view(), &[], 8).unwrap();
        assert_eq!(z[[0, 0, 0, 0]], 0.0);
        // 200 = 0b11001000: plane 7 contributes 128.
        let p7 = bit_planes(&x.view(), &[7], 8).unwrap();
        assert!((p7[[0, 0, 0, 0]] - 128.0 / 255.0).abs() < 1e-12);
        // Out-of-range plane errors.
        assert!(bit_planes(&x.view(), &[8], 8).is_err());
    }

    #[test]
    fn bit_planes_additive_over_disjoint_sets() {
        let x = Array4::from_shape_fn((1, 1, 8, 8), |(_, _, i, j)| {
            ((i * 31 + j * 7) % 256) as f64 / 255.0
        });
        let a = bit_planes(&x.view(), &[0, 2, 5], 8).unwrap();
        let b = bit_planes(&x.view(), &[1, 6, 7], 8).unwrap();
        let ab = bit_planes(&x.view(), &[0, 1, 2, 5, 6, 7], 8).unwrap();
        let diff = (&(&a + &b) - &ab)
            .mapv(f64::abs)
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}

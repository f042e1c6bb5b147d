//! Uniform radius quantizer with a per-token max scale.
//!
//! A radius `r` in `[0, σ]` becomes the integer `round(r (2^b - 1) / σ)`,
//! rounding halves away from zero.

use half::f16;

use crate::error::{invalid, Result};

pub const MAX_RADIUS_BITS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RadiusCode {
    pub quantum: u8,
    pub bits: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenScale {
    pub sigma: f64,
}

/// `2^bits - 1`.
pub fn levels(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

pub fn check_radius_bits(bits: u8) -> Result<()> {
    if (1..=MAX_RADIUS_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(invalid(format!("radius bits must be in 1..={MAX_RADIUS_BITS}, got {bits}")))
    }
}

pub fn quantize_radius(r: f64, sigma: f64, bits: u8) -> Result<RadiusCode> {
    check_radius_bits(bits)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("scale must be positive and finite, got {sigma}")));
    }
    let top = levels(bits) as f64;
    // f64::round is half-away-from-zero.
    let q = (r * top / sigma).round().clamp(0.0, top);
    Ok(RadiusCode { quantum: q as u8, bits })
}

pub fn dequantize_radius(code: RadiusCode, sigma: f64) -> f64 {
    code.quantum as f64 * sigma / levels(code.bits) as f64
}

/// Largest norm of the token; `σ = 1` when every norm is zero.
pub fn token_scale(chunk_norms: &[f64]) -> Result<TokenScale> {
    if chunk_norms.is_empty() {
        return Err(invalid("token has no chunks"));
    }
    let max = chunk_norms.iter().copied().fold(0.0, f64::max);
    Ok(TokenScale { sigma: if max > 0.0 { max } else { 1.0 } })
}

/// Smallest binary16 value that is `>= x`.
pub fn half_at_least(x: f64) -> Result<f16> {
    if !x.is_finite() {
        return Err(invalid(format!("scale {x} is not finite")));
    }
    let mut h = f16::from_f64(x);
    if h.to_f64() < x {
        h = f16::from_bits(if h.is_sign_negative() && h.to_bits() != 0x8000 {
            h.to_bits() - 1
        } else if h.to_bits() == 0x8000 {
            1
        } else {
            h.to_bits() + 1
        });
    }
    if !h.is_finite() {
        return Err(invalid(format!("scale {x} exceeds the half-precision range")));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(quantize_radius(1.0, 1.0, 4).unwrap().quantum, 15);
        assert_eq!(quantize_radius(0.5, 1.0, 3).unwrap().quantum, 4);
        assert_eq!(quantize_radius(0.0, 1.0, 3).unwrap().quantum, 0);
        assert_eq!(dequantize_radius(RadiusCode { quantum: 15, bits: 4 }, 1.0), 1.0);
        assert!((dequantize_radius(RadiusCode { quantum: 4, bits: 3 }, 1.0) - 4.0 / 7.0).abs() < 1e-15);
        assert!(quantize_radius(0.5, 0.0, 3).is_err());
        assert!(quantize_radius(0.5, 1.0, 0).is_err());
        assert!(quantize_radius(0.5, 1.0, 9).is_err());
    }

    #[test]
    fn scales() {
        assert_eq!(token_scale(&[0.2, 0.9, 0.4]).unwrap().sigma, 0.9);
        assert_eq!(token_scale(&[0.0, 0.0]).unwrap().sigma, 1.0);
        assert!(token_scale(&[]).is_err());
        let s = token_scale(&[0.37]).unwrap().sigma;
        let q = quantize_radius(0.37, s, 5).unwrap();
        assert_eq!(q.quantum, 31);
        assert_eq!(dequantize_radius(q, s), 0.37);
    }

    #[test]
    fn grid_points_are_exact() {
        for bits in 1..=8 {
            let top = levels(bits);
            for k in 0..=top {
                let r = 2.5 * k as f64 / top as f64;
                let q = quantize_radius(r, 2.5, bits).unwrap();
                assert_eq!(q.quantum as u32, k);
                assert!((dequantize_radius(q, 2.5) - r).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn half_rounds_up() {
        for x in [0.1, 1.0, 0.3333, 1234.567, 6e-8, 0.0, 65504.0] {
            let h = half_at_least(x).unwrap();
            assert!(h.to_f64() >= x);
            let below = f16::from_bits(h.to_bits().wrapping_sub(1));
            assert!(h.to_bits() == 0 || below.to_f64() < x);
        }
        assert_eq!(half_at_least(1.0).unwrap(), f16::ONE);
        assert!(half_at_least(65520.0).is_err());
        assert!(half_at_least(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn error_bound(frac in 0.0f64..=1.0, sigma in 1e-3f64..1e3, bits in 1u8..=8) {
            let r = frac * sigma;
            let back = dequantize_radius(quantize_radius(r, sigma, bits).unwrap(), sigma);
            prop_assert!(back >= 0.0 && back <= sigma * (1.0 + 1e-15));
            prop_assert!((back - r).abs() <= sigma / (2.0 * levels(bits) as f64) * (1.0 + 1e-12));
        }

        #[test]
        fn monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, bits in 1u8..=8) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_radius(lo, 1.0, bits).unwrap().quantum <= quantize_radius(hi, 1.0, bits).unwrap().quantum);
        }

        #[test]
        fn six_bit_refines_three_bit(frac in 0.0f64..=1.0, sigma in 1e-2f64..1e2) {
            // 63 = 7 * 9, so the 3-bit grid is a subset of the 6-bit grid.
            let r = frac * sigma;
            let err = |bits| (dequantize_radius(quantize_radius(r, sigma, bits).unwrap(), sigma) - r).abs();
            prop_assert!(err(6) <= err(3) + 1e-12 * sigma);
        }
    }
}

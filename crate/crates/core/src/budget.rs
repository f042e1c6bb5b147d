//! Bits-per-element and cache-size accounting.
//!
//! Per chunk an HQMQ code costs `index_bits + b_r`, where `index_bits` is
//! either the information content `log2(24 S)` (fractional mode, as quoted
//! in rate tables) or the stored width `ceil(log2(24 S))` (ceiled mode, as
//! written to disk). Per element that is divided by 4, then scaled by
//! `ceil(d_h / 4) * 4 / d_h` when the head is padded. The fp16 per-token
//! scale adds `16 / d_h`.

use std::fmt;
use std::str::FromStr;

use crate::codec::index_bits;
use crate::error::{invalid, HqmqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitMode {
    Fractional,
    Ceiled,
}

impl fmt::Display for BitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BitMode::Fractional => "fractional",
            BitMode::Ceiled => "ceiled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitBudget {
    pub mode: BitMode,
    pub secondary_size: usize,
    pub head_dim: usize,
    pub index_bits_fractional: f64,
    pub index_bits_ceiled: u32,
    pub radius_bits: u8,
    pub per_chunk_bits: f64,
    pub per_element_bits: f64,
    pub per_element_with_scale: f64,
    /// fp16 bits over `per_element_with_scale`.
    pub compression_ratio: f64,
}

impl BitBudget {
    /// The index width used in `per_chunk_bits` for this budget's mode.
    pub fn index_bits(&self) -> f64 {
        match self.mode {
            BitMode::Fractional => self.index_bits_fractional,
            BitMode::Ceiled => self.index_bits_ceiled as f64,
        }
    }
}

/// `ceil(d_h / 4) * 4 / d_h`.
pub fn padding_factor(head_dim: usize) -> f64 {
    (head_dim.div_ceil(4) * 4) as f64 / head_dim as f64
}

pub fn budget(secondary_size: usize, radius_bits: u8, head_dim: usize, mode: BitMode) -> Result<BitBudget> {
    if secondary_size == 0 {
        return Err(invalid("S must be at least 1"));
    }
    if head_dim < 4 {
        return Err(invalid("d_h must be at least 4"));
    }
    let frac = (24.0 * secondary_size as f64).log2();
    let ceiled = index_bits(secondary_size);
    let idx = match mode {
        BitMode::Fractional => frac,
        BitMode::Ceiled => ceiled as f64,
    };
    let per_chunk = idx + radius_bits as f64;
    let per_element = per_chunk / 4.0 * padding_factor(head_dim);
    let with_scale = per_element + 16.0 / head_dim as f64;
    Ok(BitBudget {
        mode,
        secondary_size,
        head_dim,
        index_bits_fractional: frac,
        index_bits_ceiled: ceiled,
        radius_bits,
        per_chunk_bits: per_chunk,
        per_element_bits: per_element,
        per_element_with_scale: with_scale,
        compression_ratio: 16.0 / with_scale,
    })
}

/// KV cache dimensions of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub layers: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
}

impl ModelShape {
    pub const MISTRAL_7B: ModelShape = ModelShape { layers: 32, kv_heads: 8, head_dim: 128 };
    pub const LLAMA3_70B: ModelShape = ModelShape { layers: 80, kv_heads: 8, head_dim: 128 };
}

/// Bytes for K and V: `2 · layers · kv_heads · d_h · tokens · bits / 8`.
pub fn cache_size(model: ModelShape, context_tokens: usize, bits_per_element: f64) -> f64 {
    2.0 * model.layers as f64
        * model.kv_heads as f64
        * model.head_dim as f64
        * context_tokens as f64
        * bits_per_element
        / 8.0
}

/// An `sNN_rM` configuration label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HqmqLabel {
    pub secondary_size: usize,
    pub radius_bits: u8,
}

impl FromStr for HqmqLabel {
    type Err = HqmqError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("expected a config like s96_r4, got {s:?}"));
        let rest = s.strip_prefix('s').ok_or_else(bad)?;
        let (size, radius) = rest.split_once("_r").ok_or_else(bad)?;
        let secondary_size: usize = size.parse().map_err(|_| bad())?;
        let radius_bits: u8 = radius.parse().map_err(|_| bad())?;
        if secondary_size == 0 || !(1..=8).contains(&radius_bits) {
            return Err(bad());
        }
        Ok(Self { secondary_size, radius_bits })
    }
}

impl fmt::Display for HqmqLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}_r{}", self.secondary_size, self.radius_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_rows() {
        let rows = [
            (24, 3, 9.17, 12.17, 3.04, 3.17),
            (24, 4, 9.17, 13.17, 3.29, 3.42),
            (48, 4, 10.17, 14.17, 3.54, 3.67),
            (96, 4, 11.17, 15.17, 3.79, 3.92),
            (192, 4, 12.17, 16.17, 4.04, 4.17),
            (192, 6, 12.17, 18.17, 4.54, 4.67),
        ];
        for (s, br, idx, chunk, elem, scaled) in rows {
            let b = budget(s, br, 128, BitMode::Fractional).unwrap();
            assert!((b.index_bits_fractional - idx).abs() < 0.01);
            assert!((b.per_chunk_bits - chunk).abs() < 0.01);
            assert!((b.per_element_bits - elem).abs() < 0.01);
            assert!((b.per_element_with_scale - scaled).abs() < 0.01);
        }
    }

    #[test]
    fn ceiled_exceeds_fractional() {
        for s in 1..=512 {
            let f = budget(s, 4, 128, BitMode::Fractional).unwrap();
            let c = budget(s, 4, 128, BitMode::Ceiled).unwrap();
            assert!(c.per_element_bits > f.per_element_bits);
        }
    }

    #[test]
    fn padding_overhead() {
        let base = budget(24, 3, 48, BitMode::Fractional).unwrap();
        let padded = budget(24, 3, 45, BitMode::Fractional).unwrap();
        assert!((padding_factor(45) - 48.0 / 45.0).abs() < 1e-15);
        assert!((padded.per_element_bits / base.per_element_bits - 48.0 / 45.0).abs() < 1e-12);
        assert_eq!(padding_factor(128), 1.0);
    }

    #[test]
    fn compression_ratio() {
        let b = budget(24, 3, 128, BitMode::Fractional).unwrap();
        assert!((b.compression_ratio - 5.05).abs() < 0.01);
    }

    #[test]
    fn labels() {
        let l: HqmqLabel = "s96_r4".parse().unwrap();
        assert_eq!(l, HqmqLabel { secondary_size: 96, radius_bits: 4 });
        assert_eq!(l.to_string(), "s96_r4");
        for bad in ["96_r4", "s96r4", "s0_r4", "s24_r9", "sx_r3"] {
            assert!(bad.parse::<HqmqLabel>().is_err(), "{bad}");
        }
    }

    #[test]
    fn errors() {
        assert!(budget(0, 3, 128, BitMode::Fractional).is_err());
        assert!(budget(24, 3, 3, BitMode::Fractional).is_err());
    }
}

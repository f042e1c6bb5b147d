//! Median-multiplier outlier extraction.
//!
//! A chunk is an outlier when its norm is strictly greater than `C` times
//! the lower median of the chunk norms in its batch. Outliers are kept as
//! half-precision 4-tuples and bypass the codebook.

use half::f16;

use crate::error::{invalid, Result};
use crate::quat::Quaternion;

/// Batches smaller than this give a noisy median and log a warning.
pub const STABLE_BATCH_CHUNKS: usize = 1000;

/// `C` is kept on a 1/65536 grid so it survives the Q16.16 field of the
/// packed header unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierPolicy {
    c: f64,
}

impl OutlierPolicy {
    pub const DEFAULT_C: f64 = 3.0;

    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() || c >= 65536.0 {
            return Err(invalid(format!("outlier multiplier must be in (0, 65536), got {c}")));
        }
        let fixed = (c * 65536.0).round();
        if fixed < 1.0 {
            return Err(invalid(format!("outlier multiplier {c} underflows Q16.16")));
        }
        Ok(Self { c: fixed / 65536.0 })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn to_fixed(&self) -> u32 {
        (self.c * 65536.0) as u32
    }

    pub fn from_fixed(raw: u32) -> Result<Self> {
        Self::new(raw as f64 / 65536.0)
    }
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        Self { c: Self::DEFAULT_C }
    }
}

/// Which chunks share one median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MedianPooling {
    /// One median over every chunk of the call, across heads and tokens.
    #[default]
    AcrossHeads,
    /// A separate median per head.
    PerHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub flags: Vec<bool>,
    /// Half-precision copies of the flagged chunks, in chunk order.
    pub payloads: Vec<[f16; 4]>,
    pub r_med: f64,
    pub fraction: f64,
}

impl ExtractionResult {
    pub fn count(&self) -> usize {
        self.payloads.len()
    }
}

/// Lower median (element `(n - 1) / 2` of the sorted list).
pub fn lower_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("median of an empty list"));
    }
    let mut v = values.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*m)
}

pub fn to_half(q: Quaternion) -> [f16; 4] {
    q.to_array().map(f16::from_f64)
}

pub fn from_half(h: [f16; 4]) -> Quaternion {
    Quaternion::from_array(h.map(f16::to_f64))
}

/// Flags chunks with `‖x‖ > C · r_med` and keeps half copies of them.
pub fn extract(chunks: &[Quaternion], policy: OutlierPolicy) -> Result<ExtractionResult> {
    let norms: Vec<f64> = chunks.iter().map(|q| q.norm()).collect();
    let flags = flag_by_norm(&norms, policy)?;
    let r_med = lower_median(&norms)?;
    let payloads = chunks
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(q, _)| to_half(*q))
        .collect::<Vec<_>>();
    let fraction = payloads.len() as f64 / chunks.len() as f64;
    Ok(ExtractionResult { flags, payloads, r_med, fraction })
}

/// Just the flag vector, from precomputed norms.
pub fn flag_by_norm(norms: &[f64], policy: OutlierPolicy) -> Result<Vec<bool>> {
    if norms.is_empty() {
        return Err(invalid("outlier extraction needs a nonempty batch"));
    }
    if norms.len() < STABLE_BATCH_CHUNKS {
        log::warn!(
            "median over {} chunks is below the {} chunk stability floor",
            norms.len(),
            STABLE_BATCH_CHUNKS
        );
    }
    let threshold = policy.c() * lower_median(norms)?;
    Ok(norms.iter().map(|&r| r > threshold).collect())
}

/// Per-element bits with extraction at outlier fraction `p`:
/// `(1 - p) b + 16 p + 1 / d_chunk`.
pub fn effective_bits(b_hqmq: f64, p: f64, d_chunk: f64) -> f64 {
    (1.0 - p) * b_hqmq + p * 16.0 + 1.0 / d_chunk
}

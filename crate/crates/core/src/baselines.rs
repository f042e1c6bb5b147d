//! Comparison codecs: naive per-token integer quantization and an
//! uncalibrated two-codebook additive VQ.

use half::f16;
use rayon::prelude::*;

use crate::codec::{chunk, TensorShape};
use crate::error::{invalid, Result};
use crate::outlier::{flag_by_norm, OutlierPolicy};
use crate::quat::{haar_sample, Quaternion};
use crate::rng::SeededRng;
use crate::scalar::{check_radius_bits, dequantize_radius, half_at_least, quantize_radius, token_scale};

/// Symmetric signed integer quantization with a per-token max-abs scale.
///
/// With `L = 2^(B-1) - 1`: `q = clamp(round(x / scale · L), -L - 1, L)` and
/// `x̂ = q · scale / L`. A token whose scale is zero decodes to zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveIntConfig {
    pub bits: u8,
    /// Optional median-multiplier extraction applied before scaling.
    pub outlier: Option<OutlierPolicy>,
}

impl NaiveIntConfig {
    pub fn new(bits: u8) -> Self {
        Self { bits, outlier: None }
    }

    pub fn with_outlier(mut self, policy: OutlierPolicy) -> Self {
        self.outlier = Some(policy);
        self
    }

    /// Integer bits plus the fp16 scale, `B + 16 / d_h`.
    pub fn bits_per_element(&self, head_dim: usize) -> f64 {
        self.bits as f64 + 16.0 / head_dim as f64
    }
}

fn check_shape(data: &[f64], shape: &TensorShape) -> Result<()> {
    if data.len() != shape.num_elements() {
        return Err(invalid(format!(
            "data has {} elements but shape needs {}",
            data.len(),
            shape.num_elements()
        )));
    }
    Ok(())
}

/// Element-level outlier mask derived from chunk flags (pooled over the
/// whole tensor), or `None` when extraction is off.
fn element_outlier_mask(data: &[f64], shape: &TensorShape, policy: Option<OutlierPolicy>) -> Result<Option<Vec<bool>>> {
    let Some(policy) = policy else { return Ok(None) };
    if data.is_empty() {
        return Ok(None);
    }
    let chunks: Vec<Quaternion> = data.chunks(shape.head_dim).flat_map(chunk).collect();
    let norms: Vec<f64> = chunks.iter().map(|q| q.norm()).collect();
    let flags = flag_by_norm(&norms, policy)?;
    let cpv = shape.chunks_per_vector();
    let mut mask = vec![false; data.len()];
    for (i, m) in mask.iter_mut().enumerate() {
        let (v, col) = (i / shape.head_dim, i % shape.head_dim);
        *m = flags[v * cpv + col / 4];
    }
    Ok(Some(mask))
}

pub fn naive_int_roundtrip(data: &[f64], shape: TensorShape, config: NaiveIntConfig) -> Result<Vec<f64>> {
    if !(2..=16).contains(&config.bits) {
        return Err(invalid(format!("naive int needs 2..=16 bits, got {}", config.bits)));
    }
    check_shape(data, &shape)?;
    let mask = element_outlier_mask(data, &shape, config.outlier)?;
    let top = ((1i64 << (config.bits - 1)) - 1) as f64;
    let lowest = -top - 1.0;
    let d = shape.head_dim;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(d).enumerate().for_each(|(v, row)| {
        let src = &data[v * d..(v + 1) * d];
        let is_out = |i: usize| mask.as_ref().is_some_and(|m| m[v * d + i]);
        let scale = (0..d).filter(|&i| !is_out(i)).map(|i| src[i].abs()).fold(0.0, f64::max);
        for i in 0..d {
            row[i] = if is_out(i) {
                f16::from_f64(src[i]).to_f64()
            } else if scale == 0.0 {
                0.0
            } else {
                let q = (src[i] / scale * top).round().clamp(lowest, top);
                q * scale / top
            };
        }
    });
    Ok(out)
}

/// Two seeded codebooks of `K` random unit vectors; a chunk direction is
/// reconstructed as `normalize(c1[i1] + c2[i2])`.
#[derive(Debug, Clone)]
pub struct AdditiveCodebookPair {
    pub first: Vec<Quaternion>,
    pub second: Vec<Quaternion>,
    /// Normalized sums at `i1 * K + i2`; `None` where the sum vanishes.
    directions: Vec<Option<Quaternion>>,
}

/// Sums shorter than this are skipped as directionless.
const MIN_SUM_NORM: f64 = 1e-12;

impl AdditiveCodebookPair {
    pub fn seeded(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("additive codebooks need K >= 1"));
        }
        let mut r1 = SeededRng::stream(seed, 1);
        let mut r2 = SeededRng::stream(seed, 2);
        let first: Vec<Quaternion> = (0..k).map(|_| haar_sample(&mut r1)).collect();
        let second: Vec<Quaternion> = (0..k).map(|_| haar_sample(&mut r2)).collect();
        Ok(Self::from_codebooks(first, second))
    }

    pub fn from_codebooks(first: Vec<Quaternion>, second: Vec<Quaternion>) -> Self {
        let directions = first
            .iter()
            .flat_map(|&a| second.iter().map(move |&b| a + b))
            .map(|s| if s.norm() < MIN_SUM_NORM { None } else { s.normalize().ok() })
            .collect();
        Self { first, second, directions }
    }

    pub fn k(&self) -> usize {
        self.first.len()
    }

    pub fn direction(&self, i1: usize, i2: usize) -> Option<Quaternion> {
        self.directions.get(i1 * self.second.len() + i2).copied().flatten()
    }

    /// Exhaustive search over all `K²` pairs; ties go to the lowest
    /// `(i1, i2)` in row-major order.
    pub fn search(&self, u: Quaternion) -> Option<(usize, usize, f64)> {
        let k2 = self.second.len();
        let mut best: Option<(usize, f64)> = None;
        for (flat, d) in self.directions.iter().enumerate() {
            if let Some(d) = d {
                let c = u.dot(*d);
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((flat, c));
                }
            }
        }
        best.map(|(flat, c)| (flat / k2, flat % k2, c))
    }

    /// `2 log2 K` index bits plus radius bits.
    pub fn bits_per_chunk_fractional(&self, radius_bits: u8) -> f64 {
        2.0 * (self.k() as f64).log2() + radius_bits as f64
    }

    /// `ceil(2 log2 K)` index bits plus radius bits.
    pub fn bits_per_chunk(&self, radius_bits: u8) -> f64 {
        self.bits_per_chunk_fractional(0).ceil() + radius_bits as f64
    }

    pub fn encode_direction(&self, u: Quaternion) -> Quaternion {
        self.search(u)
            .and_then(|(i1, i2, _)| self.direction(i1, i2))
            .unwrap_or(Quaternion::ONE)
    }
}

/// Fake-quant through the additive codec, radius handled as in HQMQ.
pub fn additive_vq_roundtrip(
    data: &[f64],
    shape: TensorShape,
    pair: &AdditiveCodebookPair,
    radius_bits: u8,
) -> Result<Vec<f64>> {
    check_radius_bits(radius_bits)?;
    check_shape(data, &shape)?;
    let d = shape.head_dim;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(d).enumerate().try_for_each(|(v, row)| -> Result<()> {
        let chunks = chunk(&data[v * d..(v + 1) * d]);
        let norms: Vec<f64> = chunks.iter().map(|q| q.norm()).collect();
        let sigma = half_at_least(token_scale(&norms)?.sigma)?.to_f64();
        for (c, (x, r)) in chunks.iter().zip(&norms).enumerate() {
            let rec = if *r == 0.0 {
                Quaternion::ZERO
            } else {
                let rq = dequantize_radius(quantize_radius(*r, sigma, radius_bits)?, sigma);
                pair.encode_direction(x.scale(1.0 / r)).scale(rq)
            };
            let end = (4 * c + 4).min(d);
            row[4 * c..end].copy_from_slice(&rec.to_array()[..end - 4 * c]);
        }
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn gaussian(shape: TensorShape, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..shape.num_elements()).map(|_| rng.normal()).collect()
    }

    fn frob(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn endpoint_is_exact() {
        let shape = TensorShape::new(1, 1, 1, 4).unwrap();
        let data = [0.7, -0.2, 0.1, 0.3];
        let out = naive_int_roundtrip(&data, shape, NaiveIntConfig::new(4)).unwrap();
        assert_eq!(out[0], 0.7);
    }

    #[test]
    fn per_element_bound() {
        let shape = TensorShape::new(2, 2, 8, 16).unwrap();
        let data = gaussian(shape, 1);
        for bits in [2u8, 3, 4, 8] {
            let out = naive_int_roundtrip(&data, shape, NaiveIntConfig::new(bits)).unwrap();
            let top = ((1 << (bits - 1)) - 1) as f64;
            for (row_in, row_out) in data.chunks(16).zip(out.chunks(16)) {
                let scale = row_in.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for (x, y) in row_in.iter().zip(row_out) {
                    assert!((x - y).abs() <= scale / (2.0 * top) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn error_decreases_with_bits() {
        let shape = TensorShape::new(1, 4, 64, 128).unwrap();
        let data = gaussian(shape, 2);
        let err = |b| frob(&data, &naive_int_roundtrip(&data, shape, NaiveIntConfig::new(b)).unwrap());
        assert!(err(4) < err(3));
        assert!(err(3) < err(2));
    }

    #[test]
    fn grid_tensor_is_exact() {
        let shape = TensorShape::new(1, 1, 2, 4).unwrap();
        let data = [1.0, -1.0 / 7.0, 3.0 / 7.0, 0.0, 2.0, 0.0, -8.0 / 7.0, 2.0 / 7.0 * 2.0];
        let out = naive_int_roundtrip(&data, shape, NaiveIntConfig::new(4)).unwrap();
        for (x, y) in data.iter().zip(&out) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_token() {
        let shape = TensorShape::new(1, 1, 1, 8).unwrap();
        let out = naive_int_roundtrip(&[0.0; 8], shape, NaiveIntConfig::new(3)).unwrap();
        assert_eq!(out, vec![0.0; 8]);
    }

    #[test]
    fn additive_self_match() {
        let pair = AdditiveCodebookPair::seeded(8, 4).unwrap();
        let u = pair.direction(0, 0).unwrap();
        let (i1, i2, c) = pair.search(u).unwrap();
        assert_eq!((i1, i2), (0, 0));
        assert!(1.0 - c < 1e-12);
    }

    #[test]
    fn additive_k1_is_one_direction() {
        let pair = AdditiveCodebookPair::seeded(1, 4).unwrap();
        let only = pair.direction(0, 0).unwrap();
        let shape = TensorShape::new(1, 1, 10, 8).unwrap();
        let data = gaussian(shape, 3);
        let out = additive_vq_roundtrip(&data, shape, &pair, 4).unwrap();
        for c in out.chunks(4) {
            let q = Quaternion::from_array([c[0], c[1], c[2], c[3]]);
            if q.norm() > 0.0 {
                assert!((q.normalize().unwrap() - only).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn additive_skips_vanishing_sums() {
        let a = Quaternion::ONE;
        let pair = AdditiveCodebookPair::from_codebooks(vec![a], vec![-a, Quaternion::new(0., 1., 0., 0.)]);
        assert!(pair.direction(0, 0).is_none());
        let (i1, i2, _) = pair.search(Quaternion::ONE).unwrap();
        assert_eq!((i1, i2), (0, 1));
    }

    #[test]
    fn additive_bits() {
        let pair = AdditiveCodebookPair::seeded(24, 0).unwrap();
        assert!((pair.bits_per_chunk_fractional(3) - 12.17).abs() < 0.01);
        assert_eq!(pair.bits_per_chunk(3), 13.0);
    }

    #[test]
    fn additive_search_matches_brute_force() {
        let pair = AdditiveCodebookPair::seeded(12, 9).unwrap();
        let mut rng = SeededRng::new(10);
        for _ in 0..200 {
            let u = haar_sample(&mut rng);
            let (i1, i2, _) = pair.search(u).unwrap();
            let mut best = (0, 0, f64::NEG_INFINITY);
            for a in 0..12 {
                for b in 0..12 {
                    let d = (pair.first[a] + pair.second[b]).normalize().unwrap();
                    if u.dot(d) > best.2 {
                        best = (a, b, u.dot(d));
                    }
                }
            }
            assert_eq!((i1, i2), (best.0, best.1));
        }
    }
}

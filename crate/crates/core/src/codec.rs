//! Encode and decode of `(B, H, T, d_h)` cache tensors.
//!
//! Each head vector is split into 4-element chunks (the last one
//! zero-padded when `d_h` is not a multiple of 4). For every token the
//! scale `σ` is the largest norm among its non-outlier chunks. It is
//! rounded up to binary16 before use, so the value used for encoding is
//! exactly the value that gets stored. Every non-outlier chunk is then
//! coded as a joint-codebook index for its direction plus a radius
//! quantum.
//!
//! A zero chunk is coded as `(index 0, quantum 0)` and decodes to exactly
//! zero.
//!
//! Data is row-major: element `(b, h, t, i)` sits at
//! `((b * H + h) * T + t) * d_h + i`. Chunks follow the same order, with
//! `ceil(d_h / 4)` chunks per vector.

use half::f16;
use rayon::prelude::*;

use crate::error::{invalid, HqmqError, Result};
use crate::joint::{JointCodebook, Role};
use crate::outlier::{flag_by_norm, from_half, to_half, MedianPooling, OutlierPolicy};
use crate::quat::Quaternion;
use crate::scalar::{
    check_radius_bits, dequantize_radius, half_at_least, quantize_radius, token_scale, RadiusCode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorShape {
    pub batch: usize,
    pub heads: usize,
    pub tokens: usize,
    pub head_dim: usize,
}

impl TensorShape {
    pub fn new(batch: usize, heads: usize, tokens: usize, head_dim: usize) -> Result<Self> {
        if head_dim == 0 {
            return Err(invalid("head_dim must be at least 1"));
        }
        Ok(Self { batch, heads, tokens, head_dim })
    }

    pub fn chunks_per_vector(&self) -> usize {
        self.head_dim.div_ceil(4)
    }

    /// `B · H · T`, one per token per head.
    pub fn num_vectors(&self) -> usize {
        self.batch * self.heads * self.tokens
    }

    pub fn num_chunks(&self) -> usize {
        self.num_vectors() * self.chunks_per_vector()
    }

    pub fn num_elements(&self) -> usize {
        self.num_vectors() * self.head_dim
    }

    /// Head index of vector `v`.
    pub fn head_of_vector(&self, v: usize) -> usize {
        (v / self.tokens) % self.heads
    }

    pub fn vector_index(&self, b: usize, h: usize, t: usize) -> usize {
        (b * self.heads + h) * self.tokens + t
    }
}

/// Codec parameters for one (layer, role) call.
///
/// Head `h` of the tensor uses the codebook keyed by
/// `(seed, layer, head_offset + h, role)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub secondary_size: usize,
    pub radius_bits: u8,
    pub seed: u64,
    pub layer: u32,
    pub head_offset: u32,
    pub role: Role,
    pub outlier: Option<OutlierPolicy>,
    pub pooling: MedianPooling,
}

impl CodecConfig {
    pub fn new(secondary_size: usize, radius_bits: u8, seed: u64) -> Self {
        Self {
            secondary_size,
            radius_bits,
            seed,
            layer: 0,
            head_offset: 0,
            role: Role::Key,
            outlier: None,
            pooling: MedianPooling::AcrossHeads,
        }
    }

    pub fn with_outlier(mut self, policy: OutlierPolicy) -> Self {
        self.outlier = Some(policy);
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn with_layer(mut self, layer: u32) -> Self {
        self.layer = layer;
        self
    }

    pub fn with_head_offset(mut self, head_offset: u32) -> Self {
        self.head_offset = head_offset;
        self
    }

    pub fn with_pooling(mut self, pooling: MedianPooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.secondary_size == 0 {
            return Err(invalid("secondary size S must be at least 1"));
        }
        if 24 * self.secondary_size > u32::MAX as usize {
            return Err(invalid("secondary size S is too large"));
        }
        check_radius_bits(self.radius_bits)
    }

    /// `ceil(log2(24 S))`.
    pub fn index_bits(&self) -> u32 {
        index_bits(self.secondary_size)
    }

    /// One joint codebook per head.
    pub fn codebooks(&self, heads: usize) -> Result<Vec<JointCodebook>> {
        self.validate()?;
        (0..heads)
            .into_par_iter()
            .map(|h| {
                JointCodebook::seeded(
                    self.seed,
                    self.layer,
                    self.head_offset + h as u32,
                    self.role,
                    self.secondary_size,
                )
            })
            .collect()
    }
}

/// `ceil(log2(24 S))` for `S >= 1`.
pub fn index_bits(secondary_size: usize) -> u32 {
    let n = 24 * secondary_size as u64;
    64 - (n - 1).leading_zeros()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkCode {
    /// Flat joint-codebook index `p * S + s`.
    pub index: u32,
    pub radius: RadiusCode,
}

/// Where a chunk's data lives inside a [`QuantizedTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkSlot {
    Code(usize),
    Outlier(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: TensorShape,
    pub config: CodecConfig,
    /// One binary16 scale per vector.
    pub scales: Vec<f16>,
    /// Codes of the non-outlier chunks, in chunk order.
    pub codes: Vec<ChunkCode>,
    /// One flag per chunk when extraction is enabled, otherwise empty.
    pub flags: Vec<bool>,
    /// Half copies of the flagged chunks, in chunk order.
    pub payloads: Vec<[f16; 4]>,
}

impl QuantizedTensor {
    pub fn outlier_fraction(&self) -> f64 {
        let n = self.shape.num_chunks();
        if n == 0 {
            0.0
        } else {
            self.payloads.len() as f64 / n as f64
        }
    }

    /// Structural checks: counts, index ranges and radius quanta.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let n = self.shape.num_chunks();
        if self.scales.len() != self.shape.num_vectors() {
            return Err(HqmqError::CorruptData("scale count does not match shape".into()));
        }
        if self.codes.len() + self.payloads.len() != n {
            return Err(HqmqError::CorruptData("chunk count does not match shape".into()));
        }
        match self.config.outlier {
            Some(_) => {
                if self.flags.len() != n {
                    return Err(HqmqError::CorruptData("flag count does not match shape".into()));
                }
                let flagged = self.flags.iter().filter(|&&f| f).count();
                if flagged != self.payloads.len() {
                    return Err(HqmqError::CorruptData("flag and payload counts differ".into()));
                }
            }
            None => {
                if !self.flags.is_empty() || !self.payloads.is_empty() {
                    return Err(HqmqError::CorruptData("outlier data without a policy".into()));
                }
            }
        }
        let limit = 24 * self.config.secondary_size as u32;
        let top = (1u32 << self.config.radius_bits) - 1;
        for code in &self.codes {
            if code.index >= limit {
                return Err(HqmqError::CorruptData(format!("codeword index {} out of range", code.index)));
            }
            if code.radius.bits != self.config.radius_bits || code.radius.quantum as u32 > top {
                return Err(HqmqError::CorruptData("radius code out of range".into()));
            }
        }
        Ok(())
    }

    /// Maps chunk positions to code or payload slots.
    pub fn locator(&self) -> ChunkLocator {
        ChunkLocator::new(&self.flags)
    }

    /// Bits of the packed payload: scales, codes, flags and outliers.
    /// Excludes the file header and byte alignment.
    pub fn payload_bits(&self) -> u64 {
        let per_code = self.config.index_bits() as u64 + self.config.radius_bits as u64;
        16 * self.scales.len() as u64
            + per_code * self.codes.len() as u64
            + self.flags.len() as u64
            + 64 * self.payloads.len() as u64
    }
}

/// Rank structure over the outlier flags: for chunk `i`, the number of
/// flagged chunks before it, in O(1).
#[derive(Debug, Clone)]
pub struct ChunkLocator {
    words: Vec<u64>,
    prefix: Vec<usize>,
}

impl ChunkLocator {
    pub fn new(flags: &[bool]) -> Self {
        let mut words = vec![0u64; flags.len().div_ceil(64)];
        for (i, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
            words[i / 64] |= 1 << (i % 64);
        }
        let mut prefix = Vec::with_capacity(words.len());
        let mut acc = 0;
        for w in &words {
            prefix.push(acc);
            acc += w.count_ones() as usize;
        }
        Self { words, prefix }
    }

    pub fn slot(&self, chunk: usize) -> ChunkSlot {
        if self.words.is_empty() {
            return ChunkSlot::Code(chunk);
        }
        let (w, b) = (chunk / 64, chunk % 64);
        let below = self.words[w] & ((1u64 << b) - 1);
        let outliers_before = self.prefix[w] + below.count_ones() as usize;
        if self.words[w] >> b & 1 == 1 {
            ChunkSlot::Outlier(outliers_before)
        } else {
            ChunkSlot::Code(chunk - outliers_before)
        }
    }
}

/// Splits a head vector into chunks, zero-padding the last one.
pub fn chunk(vector: &[f64]) -> Vec<Quaternion> {
    vector
        .chunks(4)
        .map(|c| {
            let mut a = [0.0; 4];
            a[..c.len()].copy_from_slice(c);
            Quaternion::from_array(a)
        })
        .collect()
}

pub fn encode_chunk(x: Quaternion, jc: &JointCodebook, sigma: f64, radius_bits: u8) -> Result<ChunkCode> {
    let r = x.norm();
    if r == 0.0 {
        return Ok(ChunkCode { index: 0, radius: quantize_radius(0.0, sigma, radius_bits)? });
    }
    let nearest = jc.nearest(x.scale(1.0 / r))?;
    Ok(ChunkCode { index: nearest.index as u32, radius: quantize_radius(r, sigma, radius_bits)? })
}

pub fn decode_chunk(code: ChunkCode, jc: &JointCodebook, sigma: f64) -> Result<Quaternion> {
    let c = jc
        .codeword(code.index as usize)
        .ok_or_else(|| HqmqError::CorruptData(format!("codeword index {} out of range", code.index)))?;
    Ok(c.scale(dequantize_radius(code.radius, sigma)))
}

fn check_data(data: &[f64], shape: &TensorShape) -> Result<()> {
    if data.len() != shape.num_elements() {
        return Err(invalid(format!(
            "data has {} elements but shape {:?} needs {}",
            data.len(),
            shape,
            shape.num_elements()
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(invalid("data contains non-finite values"));
    }
    Ok(())
}

fn check_codebooks(config: &CodecConfig, heads: usize, codebooks: &[JointCodebook]) -> Result<()> {
    if codebooks.len() != heads {
        return Err(HqmqError::ConfigMismatch(format!(
            "{} codebooks for {} heads",
            codebooks.len(),
            heads
        )));
    }
    for (h, jc) in codebooks.iter().enumerate() {
        if jc.secondary_size() != config.secondary_size {
            return Err(HqmqError::ConfigMismatch(format!(
                "head {h}: codebook has S = {}, config has S = {}",
                jc.secondary_size(),
                config.secondary_size
            )));
        }
        if let Some(key) = jc.secondary().key() {
            let expected = (config.seed, config.layer, config.head_offset + h as u32, config.role);
            if (key.seed, key.layer, key.head, key.role) != expected {
                return Err(HqmqError::ConfigMismatch(format!(
                    "head {h}: codebook key {key:?} does not match config"
                )));
            }
        }
    }
    Ok(())
}

/// Outlier flags for every chunk, or an empty vector when disabled.
fn outlier_flags(chunks: &[Quaternion], shape: &TensorShape, config: &CodecConfig) -> Result<Vec<bool>> {
    let Some(policy) = config.outlier else {
        return Ok(Vec::new());
    };
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    let norms: Vec<f64> = chunks.iter().map(|q| q.norm()).collect();
    match config.pooling {
        MedianPooling::AcrossHeads => flag_by_norm(&norms, policy),
        MedianPooling::PerHead => {
            let cpv = shape.chunks_per_vector();
            let mut flags = vec![false; norms.len()];
            for h in 0..shape.heads {
                let members: Vec<usize> = (0..shape.num_vectors())
                    .filter(|&v| shape.head_of_vector(v) == h)
                    .flat_map(|v| v * cpv..(v + 1) * cpv)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let head_norms: Vec<f64> = members.iter().map(|&i| norms[i]).collect();
                for (i, f) in members.into_iter().zip(flag_by_norm(&head_norms, policy)?) {
                    flags[i] = f;
                }
            }
            Ok(flags)
        }
    }
}

/// Packed encode. Builds the per-head codebooks from `config`.
pub fn encode_tensor(data: &[f64], shape: TensorShape, config: CodecConfig) -> Result<QuantizedTensor> {
    let codebooks = config.codebooks(shape.heads)?;
    encode_tensor_with(data, shape, config, &codebooks)
}

/// Packed encode with prebuilt codebooks (one per head).
pub fn encode_tensor_with(
    data: &[f64],
    shape: TensorShape,
    config: CodecConfig,
    codebooks: &[JointCodebook],
) -> Result<QuantizedTensor> {
    config.validate()?;
    check_data(data, &shape)?;
    check_codebooks(&config, shape.heads, codebooks)?;

    let cpv = shape.chunks_per_vector();
    let chunks: Vec<Quaternion> = data.chunks(shape.head_dim).flat_map(chunk).collect();
    let flags = outlier_flags(&chunks, &shape, &config)?;
    let is_outlier = |i: usize| flags.get(i).copied().unwrap_or(false);

    let per_vector: Vec<(f16, Vec<ChunkCode>)> = (0..shape.num_vectors())
        .into_par_iter()
        .map(|v| {
            let range = v * cpv..(v + 1) * cpv;
            let kept: Vec<Quaternion> = range.clone().filter(|&i| !is_outlier(i)).map(|i| chunks[i]).collect();
            let norms: Vec<f64> = kept.iter().map(|q| q.norm()).collect();
            let sigma = if norms.is_empty() { 1.0 } else { token_scale(&norms)?.sigma };
            let stored = half_at_least(sigma)?;
            let jc = &codebooks[shape.head_of_vector(v)];
            let codes = kept
                .into_iter()
                .map(|x| encode_chunk(x, jc, stored.to_f64(), config.radius_bits))
                .collect::<Result<Vec<_>>>()?;
            Ok((stored, codes))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut payloads = Vec::new();
    for (i, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        let h = to_half(chunks[i]);
        if h.iter().any(|c| !c.is_finite()) {
            return Err(invalid("outlier chunk exceeds the half-precision range"));
        }
        payloads.push(h);
    }

    let mut scales = Vec::with_capacity(per_vector.len());
    let mut codes = Vec::with_capacity(chunks.len() - payloads.len());
    for (s, c) in per_vector {
        scales.push(s);
        codes.extend(c);
    }

    Ok(QuantizedTensor { shape, config, scales, codes, flags, payloads })
}

/// Dense decode; padding columns are dropped.
pub fn decode_tensor(qt: &QuantizedTensor) -> Result<Vec<f64>> {
    let codebooks = qt.config.codebooks(qt.shape.heads)?;
    decode_tensor_with(qt, &codebooks)
}

pub fn decode_tensor_with(qt: &QuantizedTensor, codebooks: &[JointCodebook]) -> Result<Vec<f64>> {
    qt.validate()?;
    check_codebooks(&qt.config, qt.shape.heads, codebooks)?;
    let shape = qt.shape;
    let cpv = shape.chunks_per_vector();
    let locator = qt.locator();
    let mut out = vec![0.0; shape.num_elements()];
    out.par_chunks_mut(shape.head_dim.max(1))
        .enumerate()
        .try_for_each(|(v, row)| -> Result<()> {
            let jc = &codebooks[shape.head_of_vector(v)];
            let sigma = qt.scales[v].to_f64();
            for c in 0..cpv {
                let q = match locator.slot(v * cpv + c) {
                    ChunkSlot::Code(k) => decode_chunk(qt.codes[k], jc, sigma)?,
                    ChunkSlot::Outlier(k) => from_half(qt.payloads[k]),
                };
                let start = 4 * c;
                let end = (start + 4).min(shape.head_dim);
                row[start..end].copy_from_slice(&q.to_array()[..end - start]);
            }
            Ok(())
        })?;
    Ok(out)
}

/// Quantize then dequantize.
pub fn fake_quantize(data: &[f64], shape: TensorShape, config: CodecConfig) -> Result<Vec<f64>> {
    let codebooks = config.codebooks(shape.heads)?;
    let qt = encode_tensor_with(data, shape, config, &codebooks)?;
    decode_tensor_with(&qt, &codebooks)
}

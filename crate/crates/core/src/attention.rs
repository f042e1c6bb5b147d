//! Attention over packed K/V.
//!
//! [`fused_attend`] never builds a dense K or V. It walks the cache in
//! tiles of [`KV_TILE`] tokens. For each tile it decodes that slice of K
//! and V straight from codeword indices, radius quanta and scales, then
//! folds it into a running softmax. Each query row keeps its running max
//! `m`, its running exp-sum `l` and an output accumulator. A new tile with
//! max score `m'` rescales both by `exp(m - m')`.
//!
//! [`reference_attend`] is the dense two-pass oracle it is checked against.
//!
//! Tensors are row-major `(B, heads, T, d_h)`. Query head `h` reads KV head
//! `h / (H_q / H_kv)`. With causal masking, query `i` sees keys
//! `j <= i + (T_kv - T_q)`. A row that sees no key produces zeros.

use std::fmt::Debug;

use num_traits::Float;
use rayon::prelude::*;

use crate::codec::{ChunkSlot, QuantizedTensor};
use crate::error::{invalid, HqmqError, Result};
use crate::joint::JointCodebook;
use crate::outlier::from_half;
use crate::scalar::levels;

/// Default KV tile length.
pub const KV_TILE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub batch: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    pub q_len: usize,
    pub kv_len: usize,
    pub head_dim: usize,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kv_heads == 0 || self.q_heads % self.kv_heads != 0 {
            return Err(invalid(format!(
                "query heads ({}) must be a multiple of KV heads ({})",
                self.q_heads, self.kv_heads
            )));
        }
        if self.head_dim == 0 {
            return Err(invalid("head_dim must be positive"));
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.q_heads / self.kv_heads
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }

    pub fn q_elements(&self) -> usize {
        self.batch * self.q_heads * self.q_len * self.head_dim
    }

    pub fn kv_elements(&self) -> usize {
        self.batch * self.kv_heads * self.kv_len * self.head_dim
    }

    /// Number of keys visible to query `i` (a prefix of the cache).
    pub fn visible_keys(&self, i: usize) -> usize {
        if self.causal {
            (i + 1 + self.kv_len).saturating_sub(self.q_len).min(self.kv_len)
        } else {
            self.kv_len
        }
    }
}

/// Floating-point types the fused path can run in.
pub trait AttnFloat: Float + Send + Sync + Debug + 'static {}
impl AttnFloat for f32 {}
impl AttnFloat for f64 {}

#[inline]
fn cast<T: AttnFloat>(x: f64) -> T {
    T::from(x).expect("finite f64 converts")
}

/// Softmax probabilities, `(B, H_q, T_q, T_kv)` row-major, computed with
/// the usual max subtraction. Masked entries are zero.
pub fn attention_probabilities(q: &[f64], k: &[f64], cfg: &AttentionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if q.len() != cfg.q_elements() || k.len() != cfg.kv_elements() {
        return Err(invalid("query or key length does not match the attention config"));
    }
    let d = cfg.head_dim;
    let scale = cfg.scale();
    let mut probs = vec![0.0; cfg.batch * cfg.q_heads * cfg.q_len * cfg.kv_len];
    if cfg.kv_len == 0 {
        return Ok(probs);
    }
    probs.par_chunks_mut(cfg.kv_len).enumerate().for_each(|(row, p)| {
        let i = row % cfg.q_len;
        let hq = (row / cfg.q_len) % cfg.q_heads;
        let b = row / (cfg.q_len * cfg.q_heads);
        let hk = hq / cfg.group_size();
        let qrow = &q[row * d..(row + 1) * d];
        let visible = cfg.visible_keys(i);
        if visible == 0 {
            return;
        }
        for (j, pj) in p.iter_mut().enumerate().take(visible) {
            let krow = &k[(((b * cfg.kv_heads + hk) * cfg.kv_len) + j) * d..][..d];
            *pj = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = p[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for pj in &mut p[..visible] {
            *pj = (*pj - max).exp();
            sum += *pj;
        }
        for pj in &mut p[..visible] {
            *pj /= sum;
        }
    });
    Ok(probs)
}

/// Dense two-pass attention on decoded tensors.
pub fn reference_attend(q: &[f64], k: &[f64], v: &[f64], cfg: &AttentionConfig) -> Result<Vec<f64>> {
    if v.len() != cfg.kv_elements() {
        return Err(invalid("value length does not match the attention config"));
    }
    let probs = attention_probabilities(q, k, cfg)?;
    let d = cfg.head_dim;
    let mut out = vec![0.0; cfg.q_elements()];
    if cfg.kv_len == 0 {
        return Ok(out);
    }
    out.par_chunks_mut(d).enumerate().for_each(|(row, o)| {
        let hq = (row / cfg.q_len) % cfg.q_heads;
        let b = row / (cfg.q_len * cfg.q_heads);
        let hk = hq / cfg.group_size();
        let p = &probs[row * cfg.kv_len..(row + 1) * cfg.kv_len];
        for (j, &pj) in p.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let vrow = &v[(((b * cfg.kv_heads + hk) * cfg.kv_len) + j) * d..][..d];
            for (oi, vi) in o.iter_mut().zip(vrow) {
                *oi += pj * vi;
            }
        }
    });
    Ok(out)
}

fn check_packed(name: &str, packed: &QuantizedTensor, books: &[JointCodebook], cfg: &AttentionConfig) -> Result<()> {
    let s = packed.shape;
    if (s.batch, s.heads, s.tokens, s.head_dim) != (cfg.batch, cfg.kv_heads, cfg.kv_len, cfg.head_dim) {
        return Err(invalid(format!("packed {name} shape {s:?} does not match the attention config")));
    }
    packed.validate()?;
    if books.len() != cfg.kv_heads {
        return Err(HqmqError::ConfigMismatch(format!("{} {name} codebooks for {} KV heads", books.len(), cfg.kv_heads)));
    }
    for (h, jc) in books.iter().enumerate() {
        let c = &packed.config;
        let key_ok = jc.secondary().key().is_none_or(|k| {
            (k.seed, k.layer, k.head, k.role) == (c.seed, c.layer, c.head_offset + h as u32, c.role)
        });
        if jc.secondary_size() != c.secondary_size || !key_ok {
            return Err(HqmqError::ConfigMismatch(format!(
                "{name} codebook for head {h} does not match the packed tensor"
            )));
        }
    }
    Ok(())
}

/// Tile-local decoder for one packed tensor in precision `T`.
struct TileDecoder<'a, T> {
    packed: &'a QuantizedTensor,
    locator: crate::codec::ChunkLocator,
    codebooks: Vec<Vec<[T; 4]>>,
    levels: T,
}

impl<'a, T: AttnFloat> TileDecoder<'a, T> {
    fn new(packed: &'a QuantizedTensor, books: &[JointCodebook]) -> Self {
        let codebooks = books
            .iter()
            .map(|jc| jc.codewords().iter().map(|c| c.to_array().map(cast::<T>)).collect())
            .collect();
        Self {
            packed,
            locator: packed.locator(),
            codebooks,
            levels: cast(levels(packed.config.radius_bits) as f64),
        }
    }

    /// Decodes tokens `start..start + len` of `(b, h)` into `out`
    /// (`len × d_h`).
    fn decode_tile(&self, b: usize, h: usize, start: usize, len: usize, out: &mut [T]) {
        let shape = self.packed.shape;
        let cpv = shape.chunks_per_vector();
        let d = shape.head_dim;
        let book = &self.codebooks[h];
        for t in 0..len {
            let v = shape.vector_index(b, h, start + t);
            let sigma: T = cast(self.packed.scales[v].to_f64());
            let row = &mut out[t * d..(t + 1) * d];
            for c in 0..cpv {
                let vals: [T; 4] = match self.locator.slot(v * cpv + c) {
                    ChunkSlot::Code(k) => {
                        let code = self.packed.codes[k];
                        let r = cast::<T>(code.radius.quantum as f64) * sigma / self.levels;
                        book[code.index as usize].map(|x| x * r)
                    }
                    ChunkSlot::Outlier(k) => from_half(self.packed.payloads[k]).to_array().map(cast::<T>),
                };
                let end = (4 * c + 4).min(d);
                row[4 * c..end].copy_from_slice(&vals[..end - 4 * c]);
            }
        }
    }
}

/// Fused decode-inside-attention in `f64` with the default tile.
pub fn fused_attend(
    q: &[f64],
    packed_k: &QuantizedTensor,
    packed_v: &QuantizedTensor,
    k_books: &[JointCodebook],
    v_books: &[JointCodebook],
    cfg: &AttentionConfig,
) -> Result<Vec<f64>> {
    fused_attend_tiled(q, packed_k, packed_v, k_books, v_books, cfg, KV_TILE)
}

/// [`fused_attend`] with an explicit KV tile length, in precision `T`.
pub fn fused_attend_tiled<T: AttnFloat>(
    q: &[T],
    packed_k: &QuantizedTensor,
    packed_v: &QuantizedTensor,
    k_books: &[JointCodebook],
    v_books: &[JointCodebook],
    cfg: &AttentionConfig,
    tile: usize,
) -> Result<Vec<T>> {
    cfg.validate()?;
    if tile == 0 {
        return Err(invalid("tile length must be positive"));
    }
    if q.len() != cfg.q_elements() {
        return Err(invalid("query length does not match the attention config"));
    }
    check_packed("K", packed_k, k_books, cfg)?;
    check_packed("V", packed_v, v_books, cfg)?;

    let d = cfg.head_dim;
    let scale: T = cast(cfg.scale());
    let kdec = TileDecoder::<T>::new(packed_k, k_books);
    let vdec = TileDecoder::<T>::new(packed_v, v_books);
    let head_block = cfg.q_len * d;
    let mut out = vec![T::zero(); cfg.q_elements()];
    if head_block == 0 {
        return Ok(out);
    }

    out.par_chunks_mut(head_block).enumerate().for_each(|(bh, o)| {
        let b = bh / cfg.q_heads;
        let hk = (bh % cfg.q_heads) / cfg.group_size();
        let qh = &q[bh * head_block..(bh + 1) * head_block];
        let mut m = vec![T::neg_infinity(); cfg.q_len];
        let mut l = vec![T::zero(); cfg.q_len];
        let mut ktile = vec![T::zero(); tile * d];
        let mut vtile = vec![T::zero(); tile * d];
        let mut scores = vec![T::zero(); tile];

        let mut start = 0;
        while start < cfg.kv_len {
            let len = tile.min(cfg.kv_len - start);
            kdec.decode_tile(b, hk, start, len, &mut ktile);
            vdec.decode_tile(b, hk, start, len, &mut vtile);
            for i in 0..cfg.q_len {
                let visible = cfg.visible_keys(i).saturating_sub(start).min(len);
                if visible == 0 {
                    continue;
                }
                let qrow = &qh[i * d..(i + 1) * d];
                let mut tile_max = T::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate().take(visible) {
                    let krow = &ktile[j * d..(j + 1) * d];
                    let dot = qrow.iter().zip(krow).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                    *s = dot * scale;
                    tile_max = tile_max.max(*s);
                }
                let m_new = m[i].max(tile_max);
                let correction = (m[i] - m_new).exp();
                let orow = &mut o[i * d..(i + 1) * d];
                for x in orow.iter_mut() {
                    *x = *x * correction;
                }
                let mut row_sum = T::zero();
                for (j, &s) in scores.iter().enumerate().take(visible) {
                    let p = (s - m_new).exp();
                    row_sum = row_sum + p;
                    let vrow = &vtile[j * d..(j + 1) * d];
                    for (x, &vv) in orow.iter_mut().zip(vrow) {
                        *x = *x + p * vv;
                    }
                }
                l[i] = l[i] * correction + row_sum;
                m[i] = m_new;
            }
            start += len;
        }

        for i in 0..cfg.q_len {
            if l[i] > T::zero() {
                for x in &mut o[i * d..(i + 1) * d] {
                    *x = *x / l[i];
                }
            }
        }
    });
    Ok(out)
}

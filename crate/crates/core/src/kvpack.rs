//! The `.kvpack` container for [`QuantizedTensor`], the `KVRW` raw tensor
//! format and the per-head manifest.
//!
//! Everything is little-endian. Bit streams are packed LSB-first within
//! bytes and every section starts on a byte boundary.
//!
//! ```text
//! offset size  field
//!      0    4  magic "HQMQ"
//!      4    2  format version (1)
//!      6    2  flags: bit 0 outlier extraction, bit 1 per-head median
//!      8    1  role (0 = K, 1 = V)
//!      9    1  radius bits
//!     10    2  reserved (0)
//!     12   16  B, H, T, d_h (u32 each)
//!     28    4  S
//!     32    8  seed
//!     40    4  layer
//!     44    4  head offset
//!     48    4  outlier C as Q16.16 (0 when extraction is off)
//!     52    4  section count (5)
//!     56   80  5 x (offset u64, length u64): scales, index, radius,
//!              flags, outlier payloads
//!    136    -  sections
//!    end-4  4  CRC-32 of every preceding byte
//! ```
//!
//! Scales are binary16 per vector. The index stream holds
//! `ceil(log2(24 S))` bits per coded chunk and the radius stream `b_r`
//! bits. The flag bitmap has one bit per chunk and is empty when
//! extraction is off. Outlier payloads are four binary16 values each.

use std::io::{Read, Write};

use half::f16;

use crate::codec::{ChunkCode, CodecConfig, QuantizedTensor, TensorShape};
use crate::error::{invalid, HqmqError, Result};
use crate::joint::Role;
use crate::outlier::{MedianPooling, OutlierPolicy};
use crate::scalar::RadiusCode;

pub const MAGIC: [u8; 4] = *b"HQMQ";
pub const FORMAT_VERSION: u16 = 1;
pub const SECTION_COUNT: usize = 5;
pub const HEADER_BYTES: usize = 56 + 16 * SECTION_COUNT;
pub const CRC_BYTES: usize = 4;

const FLAG_OUTLIER: u16 = 1;
const FLAG_PER_HEAD: u16 = 2;

fn corrupt(msg: impl Into<String>) -> HqmqError {
    HqmqError::CorruptData(msg.into())
}

/// LSB-first bit packer.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value` (`width <= 32`).
    pub fn push(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32);
        if width == 0 {
            return;
        }
        self.acc |= ((value as u64) & ((1u64 << width) - 1)) << self.filled;
        self.filled += width;
        while self.filled >= 8 {
            self.bytes.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    /// Flushes the last partial byte, zero-filled.
    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push(self.acc as u8);
        }
        self.bytes
    }
}

/// LSB-first bit reader over a byte slice.
#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn read(&mut self, width: u32) -> Result<u32> {
        let end = self.pos + width as usize;
        if end > self.bytes.len() * 8 {
            return Err(corrupt("bit stream ends early"));
        }
        let mut v = 0u32;
        for k in 0..width as usize {
            let p = self.pos + k;
            v |= ((self.bytes[p / 8] >> (p % 8) & 1) as u32) << k;
        }
        self.pos = end;
        Ok(v)
    }

    /// True when every bit after the read position is zero.
    pub fn rest_is_zero(&self) -> bool {
        (self.pos..self.bytes.len() * 8).all(|p| self.bytes[p / 8] >> (p % 8) & 1 == 0)
    }
}

fn pack(values: impl Iterator<Item = u32>, width: u32) -> Vec<u8> {
    let mut w = BitWriter::new();
    for v in values {
        w.push(v, width);
    }
    w.finish()
}

fn bits_to_bytes(count: u64, width: u64) -> Option<u64> {
    count.checked_mul(width).map(|b| b.div_ceil(8))
}

/// Serialized size of `qt` in bytes.
pub fn encoded_len(qt: &QuantizedTensor) -> u64 {
    let ib = qt.config.index_bits() as u64;
    let br = qt.config.radius_bits as u64;
    let n = qt.codes.len() as u64;
    (HEADER_BYTES + CRC_BYTES) as u64
        + 2 * qt.scales.len() as u64
        + (n * ib).div_ceil(8)
        + (n * br).div_ceil(8)
        + (qt.flags.len() as u64).div_ceil(8)
        + 8 * qt.payloads.len() as u64
}

/// Bits a file spends beyond the coded chunks: header, checksum, scales,
/// flags, outlier payloads and up to 7 alignment bits per section. An
/// upper bound on `8 * encoded_len - codes * (index_bits + b_r)`.
pub fn overhead_bound_bits(shape: &TensorShape, flags: bool, outliers: usize) -> u64 {
    8 * (HEADER_BYTES + CRC_BYTES) as u64
        + 16 * shape.num_vectors() as u64
        + if flags { shape.num_chunks() as u64 } else { 0 }
        + 64 * outliers as u64
        + 7 * SECTION_COUNT as u64
}

/// Serializes `qt`; returns the byte vector.
pub fn to_bytes(qt: &QuantizedTensor) -> Result<Vec<u8>> {
    qt.validate()?;
    let cfg = &qt.config;
    let shape = &qt.shape;
    let fits = |v: usize| u32::try_from(v).map_err(|_| invalid("dimension exceeds u32"));
    let s = fits(cfg.secondary_size)?;

    let scales: Vec<u8> = qt.scales.iter().flat_map(|h| h.to_bits().to_le_bytes()).collect();
    let index = pack(qt.codes.iter().map(|c| c.index), cfg.index_bits());
    let radius = pack(qt.codes.iter().map(|c| c.radius.quantum as u32), cfg.radius_bits as u32);
    let flags = pack(qt.flags.iter().map(|&f| f as u32), 1);
    let payloads: Vec<u8> = qt
        .payloads
        .iter()
        .flat_map(|p| p.iter().flat_map(|h| h.to_bits().to_le_bytes()))
        .collect();
    let sections = [scales, index, radius, flags, payloads];

    let mut out = Vec::with_capacity(encoded_len(qt) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let mut hflags = 0u16;
    if cfg.outlier.is_some() {
        hflags |= FLAG_OUTLIER;
    }
    if cfg.pooling == MedianPooling::PerHead {
        hflags |= FLAG_PER_HEAD;
    }
    out.extend_from_slice(&hflags.to_le_bytes());
    out.push(cfg.role.tag());
    out.push(cfg.radius_bits);
    out.extend_from_slice(&[0, 0]);
    for d in [shape.batch, shape.heads, shape.tokens, shape.head_dim] {
        out.extend_from_slice(&fits(d)?.to_le_bytes());
    }
    out.extend_from_slice(&s.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&cfg.layer.to_le_bytes());
    out.extend_from_slice(&cfg.head_offset.to_le_bytes());
    out.extend_from_slice(&cfg.outlier.map_or(0, |p| p.to_fixed()).to_le_bytes());
    out.extend_from_slice(&(SECTION_COUNT as u32).to_le_bytes());
    let mut offset = HEADER_BYTES as u64;
    for sec in &sections {
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(sec.len() as u64).to_le_bytes());
        offset += sec.len() as u64;
    }
    debug_assert_eq!(out.len(), HEADER_BYTES);
    for sec in &sections {
        out.extend_from_slice(sec);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Writes `qt` to `sink`; returns the number of bytes written.
pub fn write_kvpack<W: Write>(qt: &QuantizedTensor, mut sink: W) -> Result<u64> {
    let bytes = to_bytes(qt)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

/// Reads a whole file from `source`.
pub fn read_kvpack<R: Read>(mut source: R) -> Result<QuantizedTensor> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        a
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<QuantizedTensor> {
    if bytes.len() < 6 || bytes[..4] != MAGIC {
        return Err(corrupt("not a kvpack file"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(HqmqError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_BYTES + CRC_BYTES {
        return Err(corrupt("file is truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_BYTES);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let mut c = Cursor { bytes: body, pos: 6 };
    let hflags = c.u16();
    let role_tag = c.u8();
    let radius_bits = c.u8();
    let reserved = c.u16();
    if hflags & !(FLAG_OUTLIER | FLAG_PER_HEAD) != 0 || reserved != 0 {
        return Err(corrupt("reserved header bits are set"));
    }
    let role = Role::from_tag(role_tag).ok_or_else(|| corrupt(format!("unknown role tag {role_tag}")))?;
    let dims = [c.u32(), c.u32(), c.u32(), c.u32()];
    let secondary_size = c.u32() as usize;
    let seed = c.u64();
    let layer = c.u32();
    let head_offset = c.u32();
    let c_fixed = c.u32();
    let sections = c.u32();
    if sections as usize != SECTION_COUNT {
        return Err(corrupt(format!("expected {SECTION_COUNT} sections, found {sections}")));
    }
    let table: Vec<(u64, u64)> = (0..SECTION_COUNT).map(|_| (c.u64(), c.u64())).collect();

    let has_outlier = hflags & FLAG_OUTLIER != 0;
    let outlier = match (has_outlier, c_fixed) {
        (true, 0) => return Err(corrupt("outlier flag set without a multiplier")),
        (true, raw) => Some(OutlierPolicy::from_fixed(raw).map_err(|e| corrupt(e.to_string()))?),
        (false, 0) => None,
        (false, _) => return Err(corrupt("multiplier present without the outlier flag")),
    };
    let pooling = if hflags & FLAG_PER_HEAD != 0 { MedianPooling::PerHead } else { MedianPooling::AcrossHeads };
    let mut config = CodecConfig::new(secondary_size, radius_bits, seed)
        .with_role(role)
        .with_layer(layer)
        .with_head_offset(head_offset)
        .with_pooling(pooling);
    config.outlier = outlier;
    config.validate().map_err(|e| corrupt(e.to_string()))?;
    let [b, h, t, d] = dims.map(|x| x as usize);
    let shape = TensorShape::new(b, h, t, d).map_err(|e| corrupt(e.to_string()))?;

    // Section table must tile the body exactly.
    let mut expected_offset = HEADER_BYTES as u64;
    for &(off, len) in &table {
        if off != expected_offset {
            return Err(corrupt("section table is inconsistent"));
        }
        expected_offset = off.checked_add(len).ok_or_else(|| corrupt("section length overflows"))?;
    }
    if expected_offset != body.len() as u64 {
        return Err(corrupt("section table does not match file length"));
    }
    let section = |i: usize| &body[table[i].0 as usize..(table[i].0 + table[i].1) as usize];

    let vectors = (b as u64)
        .checked_mul(h as u64)
        .and_then(|x| x.checked_mul(t as u64))
        .ok_or_else(|| corrupt("shape overflows"))?;
    let chunks = vectors
        .checked_mul(d.div_ceil(4) as u64)
        .ok_or_else(|| corrupt("shape overflows"))?;
    let expect_len = |i: usize, want: Option<u64>| -> Result<()> {
        if want != Some(table[i].1) {
            return Err(corrupt("section length does not match shape"));
        }
        Ok(())
    };

    expect_len(0, vectors.checked_mul(2))?;
    let flag_bytes = if has_outlier { chunks.div_ceil(8) } else { 0 };
    expect_len(3, Some(flag_bytes))?;
    let mut flags = Vec::new();
    if has_outlier {
        let mut r = BitReader::new(section(3));
        flags.reserve(chunks as usize);
        for _ in 0..chunks {
            flags.push(r.read(1)? == 1);
        }
        if !r.rest_is_zero() {
            return Err(corrupt("nonzero padding in flag bitmap"));
        }
    }
    let n_out = flags.iter().filter(|&&f| f).count() as u64;
    let n_codes = chunks - n_out;
    let ib = config.index_bits();
    expect_len(1, bits_to_bytes(n_codes, ib as u64))?;
    expect_len(2, bits_to_bytes(n_codes, radius_bits as u64))?;
    expect_len(4, n_out.checked_mul(8))?;

    let scales: Vec<f16> = section(0)
        .chunks_exact(2)
        .map(|p| f16::from_bits(u16::from_le_bytes([p[0], p[1]])))
        .collect();
    let mut ir = BitReader::new(section(1));
    let mut rr = BitReader::new(section(2));
    let mut codes = Vec::with_capacity(n_codes as usize);
    for _ in 0..n_codes {
        let index = ir.read(ib)?;
        let quantum = rr.read(radius_bits as u32)? as u8;
        codes.push(ChunkCode { index, radius: RadiusCode { quantum, bits: radius_bits } });
    }
    if !ir.rest_is_zero() || !rr.rest_is_zero() {
        return Err(corrupt("nonzero padding in code streams"));
    }
    let payloads: Vec<[f16; 4]> = section(4)
        .chunks_exact(8)
        .map(|p| std::array::from_fn(|k| f16::from_bits(u16::from_le_bytes([p[2 * k], p[2 * k + 1]]))))
        .collect();

    let qt = QuantizedTensor { shape, config, scales, codes, flags, payloads };
    qt.validate()?;
    Ok(qt)
}

pub const RAW_MAGIC: [u8; 4] = *b"KVRW";
pub const RAW_HEADER_BYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    F32,
    F16,
}

impl RawDtype {
    pub fn size(self) -> usize {
        match self {
            RawDtype::F32 => 4,
            RawDtype::F16 => 2,
        }
    }

    fn tag(self) -> u8 {
        match self {
            RawDtype::F32 => 0,
            RawDtype::F16 => 1,
        }
    }
}

/// A dense `(B, H, T, d_h)` tensor as stored in a `KVRW` file:
/// magic, dtype byte, three reserved bytes, four u32 dimensions and the
/// row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensorFile {
    pub dtype: RawDtype,
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

impl RawTensorFile {
    pub fn new(dtype: RawDtype, shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_elements() {
            return Err(invalid(format!(
                "tensor has {} elements, shape needs {}",
                data.len(),
                shape.num_elements()
            )));
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(RAW_HEADER_BYTES + self.data.len() * self.dtype.size());
        out.extend_from_slice(&RAW_MAGIC);
        out.extend_from_slice(&[self.dtype.tag(), 0, 0, 0]);
        for d in [self.shape.batch, self.shape.heads, self.shape.tokens, self.shape.head_dim] {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| invalid("dimension exceeds u32"))?.to_le_bytes());
        }
        match self.dtype {
            RawDtype::F32 => {
                for &x in &self.data {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            RawDtype::F16 => {
                for &x in &self.data {
                    out.extend_from_slice(&f16::from_f64(x).to_bits().to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RAW_HEADER_BYTES || bytes[..4] != RAW_MAGIC {
            return Err(corrupt("not a raw tensor file"));
        }
        let dtype = match bytes[4] {
            0 => RawDtype::F32,
            1 => RawDtype::F16,
            other => return Err(corrupt(format!("unknown dtype tag {other}"))),
        };
        if bytes[5..8] != [0, 0, 0] {
            return Err(corrupt("reserved header bytes are set"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
        let shape = TensorShape::new(dim(0), dim(1), dim(2), dim(3)).map_err(|e| corrupt(e.to_string()))?;
        let payload = &bytes[RAW_HEADER_BYTES..];
        let want = (shape.num_elements() as u64).checked_mul(dtype.size() as u64);
        if want != Some(payload.len() as u64) {
            return Err(corrupt("payload length does not match shape"));
        }
        let data = match dtype {
            RawDtype::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
            RawDtype::F16 => payload
                .chunks_exact(2)
                .map(|b| f16::from_bits(u16::from_le_bytes([b[0], b[1]])).to_f64())
                .collect(),
        };
        Ok(Self { dtype, shape, data })
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<u64> {
        let bytes = self.to_bytes()?;
        sink.write_all(&bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn read<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Splits a `(B, H, T, d_h)` tensor into `H` single-head tensors.
pub fn split_heads(data: &[f64], shape: TensorShape) -> Result<Vec<(TensorShape, Vec<f64>)>> {
    if data.len() != shape.num_elements() {
        return Err(invalid("data does not match the shape"));
    }
    let single = TensorShape::new(shape.batch, 1, shape.tokens, shape.head_dim)?;
    let block = shape.tokens * shape.head_dim;
    Ok((0..shape.heads)
        .map(|h| {
            let mut out = Vec::with_capacity(single.num_elements());
            for b in 0..shape.batch {
                let start = (b * shape.heads + h) * block;
                out.extend_from_slice(&data[start..start + block]);
            }
            (single, out)
        })
        .collect())
}

/// One file in a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub layer: u32,
    pub head: u32,
    pub role: Role,
    pub path: String,
}

/// Plain-text list of per-(layer, head, role) kvpack files, one
/// `layer head role path` line each after a `hqmq-manifest 1` line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_HEADER: &str = "hqmq-manifest 1";

impl Manifest {
    pub fn find(&self, layer: u32, head: u32, role: Role) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.head == head && e.role == role)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            s.push_str(&format!("{} {} {} {}\n", e.layer, e.head, e.role, e.path));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return Err(corrupt("missing manifest header"));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || corrupt(format!("manifest line {} is malformed", n + 2));
            let mut parts = line.splitn(4, ' ');
            let mut next = || parts.next().ok_or_else(bad);
            let layer = next()?.parse().map_err(|_| bad())?;
            let head = next()?.parse().map_err(|_| bad())?;
            let role = next()?.parse().map_err(|_| bad())?;
            let path = next()?.to_string();
            let entry = ManifestEntry { layer, head, role, path };
            if entries.iter().any(|e: &ManifestEntry| (e.layer, e.head, e.role) == (layer, head, role)) {
                return Err(corrupt(format!("duplicate manifest member {layer} {head} {role}")));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_tensor;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn gaussian(shape: TensorShape, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..shape.num_elements()).map(|_| rng.normal()).collect()
    }

    fn sample(outlier: bool) -> QuantizedTensor {
        let shape = TensorShape::new(2, 3, 5, 10).unwrap();
        let mut data = gaussian(shape, 4);
        data[13] = 90.0;
        let mut cfg = CodecConfig::new(7, 3, 11).with_layer(2).with_role(Role::Value).with_head_offset(4);
        if outlier {
            cfg = cfg.with_outlier(OutlierPolicy::new(2.5).unwrap()).with_pooling(MedianPooling::PerHead);
        }
        encode_tensor(&data, shape, cfg).unwrap()
    }

    #[test]
    fn bit_packing_is_lsb_first() {
        let mut w = BitWriter::new();
        w.push(0b101, 3);
        w.push(0b11111, 5);
        w.push(1, 1);
        assert_eq!(w.finish(), vec![0b1111_1101, 0b1]);
        let bytes = [0b1111_1101, 0b1];
        let mut r = BitReader::new(&bytes);
        assert_eq!(r.read(3).unwrap(), 0b101);
        assert_eq!(r.read(5).unwrap(), 0b11111);
        assert_eq!(r.read(1).unwrap(), 1);
        assert!(r.rest_is_zero());
        assert!(r.read(8).is_err());
    }

    #[test]
    fn round_trip() {
        for outlier in [false, true] {
            let qt = sample(outlier);
            let bytes = to_bytes(&qt).unwrap();
            assert_eq!(bytes.len() as u64, encoded_len(&qt));
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, qt);
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn header_fields() {
        let bytes = to_bytes(&sample(true)).unwrap();
        assert_eq!(&bytes[..4], b"HQMQ");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 3);
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 3);
        assert_eq!(u32::from_le_bytes(bytes[48..52].try_into().unwrap()), (2.5 * 65536.0) as u32);
        assert_eq!(u64::from_le_bytes(bytes[56..64].try_into().unwrap()), HEADER_BYTES as u64);
    }

    #[test]
    fn empty_tensor() {
        let shape = TensorShape::new(1, 2, 0, 8).unwrap();
        let qt = encode_tensor(&[], shape, CodecConfig::new(4, 3, 1)).unwrap();
        let bytes = to_bytes(&qt).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + CRC_BYTES);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.shape.tokens, 0);
        assert!(back.codes.is_empty() && back.scales.is_empty());
    }

    #[test]
    fn every_byte_flip_is_detected() {
        let bytes = to_bytes(&sample(true)).unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(from_bytes(&bad).is_err(), "flip at byte {i} went unnoticed");
        }
    }

    #[test]
    fn version_and_truncation() {
        let mut bytes = to_bytes(&sample(false)).unwrap();
        for cut in [0, 5, 100, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(HqmqError::CorruptData(_))), "cut {cut}");
        }
        bytes[4] = 2;
        assert!(matches!(from_bytes(&bytes), Err(HqmqError::UnsupportedVersion(2))));
    }

    #[test]
    fn raw_round_trip() {
        let shape = TensorShape::new(1, 2, 3, 5).unwrap();
        let data: Vec<f64> = (0..30).map(|i| i as f64 * 0.5 - 3.0).collect();
        for dtype in [RawDtype::F32, RawDtype::F16] {
            let raw = RawTensorFile::new(dtype, shape, data.clone()).unwrap();
            let bytes = raw.to_bytes().unwrap();
            assert_eq!(bytes.len(), RAW_HEADER_BYTES + 30 * dtype.size());
            assert_eq!(RawTensorFile::from_bytes(&bytes).unwrap(), raw);
            assert!(RawTensorFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
        assert!(RawTensorFile::new(RawDtype::F32, shape, vec![0.0; 29]).is_err());
    }

    #[test]
    fn split_heads_keeps_order() {
        let shape = TensorShape::new(2, 3, 2, 1).unwrap();
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let parts = split_heads(&data, shape).unwrap();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[1].1, vec![2.0, 3.0, 8.0, 9.0]);
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            entries: vec![
                ManifestEntry { layer: 0, head: 0, role: Role::Key, path: "l0_h0_K.kvpack".into() },
                ManifestEntry { layer: 0, head: 0, role: Role::Value, path: "dir with space/v.kvpack".into() },
            ],
        };
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.find(0, 0, Role::Value).unwrap().path, "dir with space/v.kvpack");
        assert!(Manifest::parse("0 0 K x").is_err());
        assert!(Manifest::parse("hqmq-manifest 1\n0 0 K a\n0 0 K b\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn packed_streams_round_trip(values in proptest::collection::vec(any::<u32>(), 0..200), width in 1u32..=32) {
            let masked: Vec<u32> = values.iter().map(|v| if width == 32 { *v } else { v & ((1 << width) - 1) }).collect();
            let bytes = pack(masked.iter().copied(), width);
            prop_assert_eq!(bytes.len() as u64, (masked.len() as u64 * width as u64).div_ceil(8));
            let mut r = BitReader::new(&bytes);
            for &v in &masked {
                prop_assert_eq!(r.read(width).unwrap(), v);
            }
            prop_assert!(r.rest_is_zero());
        }

        #[test]
        fn tensor_files_round_trip(t in 0usize..6, d in 1usize..13, s in 1usize..20, br in 1u8..=8, seed in any::<u64>(), c in proptest::option::of(1.0f64..6.0)) {
            let shape = TensorShape::new(1, 2, t, d).unwrap();
            let data = gaussian(shape, seed);
            let mut cfg = CodecConfig::new(s, br, seed);
            if let Some(c) = c {
                cfg = cfg.with_outlier(OutlierPolicy::new(c).unwrap());
            }
            let qt = encode_tensor(&data, shape, cfg).unwrap();
            let bytes = to_bytes(&qt).unwrap();
            let back = from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &qt);
            prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }
}

//! Synthetic cache tensors, distortion metrics and comparison sweeps.
//!
//! Distortion stands in for end-task quality here. Every report gives bits
//! per element next to angular and Frobenius error.
//!
//! The outlier-heavy profile is a model of the activations, not captured
//! data. A seeded subset of chunk positions ("outlier channels") is chosen
//! per head. In every token the chunk at such a position is scaled by an
//! independent log-normal multiplier `exp(ln(median) + σ_log z)`. Every
//! other chunk is plain Gaussian.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::baselines::{additive_vq_roundtrip, naive_int_roundtrip, AdditiveCodebookPair, NaiveIntConfig};
use crate::budget::{budget, BitMode, HqmqLabel};
use crate::codec::{chunk, decode_tensor_with, encode_tensor_with, CodecConfig, TensorShape};
use crate::error::{invalid, HqmqError, Result};
use crate::outlier::{effective_bits, flag_by_norm, OutlierPolicy};
use crate::quat::Quaternion;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthProfile {
    /// I.i.d. `N(0, std²)` elements.
    Gaussian { std: f64 },
    OutlierHeavy {
        base_std: f64,
        /// Fraction of chunk positions per head that carry outliers.
        channel_fraction: f64,
        /// Median of the log-normal multiplier.
        multiplier_median: f64,
        /// Log-space standard deviation of the multiplier.
        log_sigma: f64,
    },
}

impl SynthProfile {
    pub const GAUSSIAN: SynthProfile = SynthProfile::Gaussian { std: 1.0 };

    /// Tuned so the max/median chunk-norm ratio of a `(1, 8, 512, 128)`
    /// tensor falls in the 80–280× band and about 3% of chunks exceed
    /// three times the median.
    pub const OUTLIER_HEAVY: SynthProfile = SynthProfile::OutlierHeavy {
        base_std: 1.0,
        channel_fraction: 1.0 / 32.0,
        multiplier_median: 20.0,
        log_sigma: 0.5,
    };

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SynthProfile::Gaussian { std } => std >= 0.0 && std.is_finite(),
            SynthProfile::OutlierHeavy { base_std, channel_fraction, multiplier_median, log_sigma } => {
                base_std >= 0.0
                    && (0.0..=1.0).contains(&channel_fraction)
                    && multiplier_median > 0.0
                    && log_sigma >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid synthetic profile {self:?}")))
        }
    }
}

impl FromStr for SynthProfile {
    type Err = HqmqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::GAUSSIAN),
            "outlier_heavy" | "outlier-heavy" => Ok(Self::OUTLIER_HEAVY),
            other => Err(invalid(format!("unknown profile {other:?}"))),
        }
    }
}

/// Seeded tensor of the given shape, row-major.
pub fn gen_chunks(profile: SynthProfile, shape: TensorShape, seed: u64) -> Result<Vec<f64>> {
    profile.validate()?;
    let mut rng = SeededRng::stream(seed, 0);
    let base_std = match profile {
        SynthProfile::Gaussian { std } => std,
        SynthProfile::OutlierHeavy { base_std, .. } => base_std,
    };
    let mut data: Vec<f64> = (0..shape.num_elements()).map(|_| base_std * rng.normal()).collect();

    if let SynthProfile::OutlierHeavy { channel_fraction, multiplier_median, log_sigma, .. } = profile {
        let cpv = shape.chunks_per_vector();
        let per_head = ((channel_fraction * cpv as f64).round() as usize).min(cpv);
        let mut chan_rng = SeededRng::stream(seed, 1);
        let channels: Vec<Vec<usize>> = (0..shape.heads)
            .map(|_| {
                // Partial Fisher–Yates for `per_head` distinct positions.
                let mut idx: Vec<usize> = (0..cpv).collect();
                for i in 0..per_head {
                    let j = i + chan_rng.below((cpv - i) as u64) as usize;
                    idx.swap(i, j);
                }
                idx.truncate(per_head);
                idx.sort_unstable();
                idx
            })
            .collect();
        let mut mult_rng = SeededRng::stream(seed, 2);
        let d = shape.head_dim;
        for v in 0..shape.num_vectors() {
            for &c in &channels[shape.head_of_vector(v)] {
                let m = multiplier_median * (log_sigma * mult_rng.normal()).exp();
                let start = v * d + 4 * c;
                let end = (start + 4).min((v + 1) * d);
                for x in &mut data[start..end] {
                    *x *= m;
                }
            }
        }
    }
    Ok(data)
}

/// All chunk norms of a tensor.
pub fn chunk_norms(data: &[f64], shape: &TensorShape) -> Vec<f64> {
    data.chunks(shape.head_dim).flat_map(chunk).map(|q| q.norm()).collect()
}

/// Largest chunk norm over the median (lower median) chunk norm.
pub fn max_median_ratio(data: &[f64], shape: &TensorShape) -> Result<f64> {
    let norms = chunk_norms(data, shape);
    let median = crate::outlier::lower_median(&norms)?;
    Ok(norms.iter().copied().fold(0.0, f64::max) / median)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionMetrics {
    /// Mean angle between original and reconstructed nonzero chunks.
    /// A zero reconstruction counts as π/2.
    pub mean_angle: f64,
    /// Nearest-rank 95th percentile of the same angles.
    pub p95_angle: f64,
    /// `‖X̂ - X‖_F / ‖X‖_F`.
    pub rel_frob: f64,
}

pub fn chunk_angle_errors(original: &[f64], reconstructed: &[f64], shape: &TensorShape) -> Vec<f64> {
    let d = shape.head_dim;
    original
        .par_chunks(d)
        .zip(reconstructed.par_chunks(d))
        .flat_map_iter(|(a, b)| {
            chunk(a)
                .into_iter()
                .zip(chunk(b))
                .filter(|(x, _)| x.norm() > 0.0)
                .map(|(x, y)| chunk_angle(x, y))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn chunk_angle(x: Quaternion, y: Quaternion) -> f64 {
    let ny = y.norm();
    if ny == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    (x.dot(y) / (x.norm() * ny)).clamp(-1.0, 1.0).acos()
}

pub fn distortion(original: &[f64], reconstructed: &[f64], shape: &TensorShape) -> Result<DistortionMetrics> {
    if original.len() != reconstructed.len() || original.len() != shape.num_elements() {
        return Err(invalid("distortion inputs do not match the shape"));
    }
    let mut angles = chunk_angle_errors(original, reconstructed, shape);
    angles.sort_by(f64::total_cmp);
    let mean_angle = if angles.is_empty() { 0.0 } else { angles.iter().sum::<f64>() / angles.len() as f64 };
    let p95_angle = if angles.is_empty() {
        0.0
    } else {
        angles[((0.95 * angles.len() as f64).ceil() as usize).clamp(1, angles.len()) - 1]
    };
    let err: f64 = original.iter().zip(reconstructed).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = original.iter().map(|a| a * a).sum();
    let rel_frob = if norm == 0.0 { err.sqrt() } else { (err / norm).sqrt() };
    Ok(DistortionMetrics { mean_angle, p95_angle, rel_frob })
}

/// One point of a comparison sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepConfig {
    /// `sNN_rM`, optionally `+medC`.
    Hqmq { label: HqmqLabel, outlier_c: Option<f64> },
    /// `intB`, optionally `+medC`.
    NaiveInt { bits: u8, outlier_c: Option<f64> },
    /// `addK_rM`: additive VQ with two size-`K` codebooks.
    Additive { k: usize, radius_bits: u8 },
}

impl FromStr for SweepConfig {
    type Err = HqmqError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("unknown sweep config {s:?}"));
        let (base, med) = match s.split_once("+med") {
            Some((b, c)) => (b, Some(c.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        if let Some(rest) = base.strip_prefix("int") {
            let bits: u8 = rest.parse().map_err(|_| bad())?;
            return Ok(SweepConfig::NaiveInt { bits, outlier_c: med });
        }
        if let Some(rest) = base.strip_prefix("add") {
            if med.is_some() {
                return Err(bad());
            }
            let (k, r) = rest.split_once("_r").ok_or_else(bad)?;
            return Ok(SweepConfig::Additive {
                k: k.parse().map_err(|_| bad())?,
                radius_bits: r.parse().map_err(|_| bad())?,
            });
        }
        Ok(SweepConfig::Hqmq { label: base.parse()?, outlier_c: med })
    }
}

fn fmt_c(c: f64) -> String {
    if c.fract() == 0.0 {
        format!("{}", c as i64)
    } else {
        format!("{c}")
    }
}

impl fmt::Display for SweepConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SweepConfig::Hqmq { label, outlier_c } => {
                write!(f, "{label}")?;
                if let Some(c) = outlier_c {
                    write!(f, "+med{}", fmt_c(c))?;
                }
                Ok(())
            }
            SweepConfig::NaiveInt { bits, outlier_c } => {
                write!(f, "int{bits}")?;
                if let Some(c) = outlier_c {
                    write!(f, "+med{}", fmt_c(c))?;
                }
                Ok(())
            }
            SweepConfig::Additive { k, radius_bits } => write!(f, "add{k}_r{radius_bits}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionReport {
    pub label: String,
    pub bits_per_element: f64,
    pub metrics: DistortionMetrics,
    pub outlier_p: f64,
}

/// Fraction of chunks the naive path would extract at multiplier `c`.
fn naive_outlier_fraction(data: &[f64], shape: &TensorShape, c: f64) -> Result<f64> {
    let norms = chunk_norms(data, shape);
    if norms.is_empty() {
        return Ok(0.0);
    }
    let flags = flag_by_norm(&norms, OutlierPolicy::new(c)?)?;
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Runs one config on `data` and reports bits and distortion. HQMQ and
/// additive codebooks are seeded with `seed`.
pub fn evaluate(config: SweepConfig, data: &[f64], shape: TensorShape, seed: u64) -> Result<DistortionReport> {
    let (recon, bits, p) = match config {
        SweepConfig::Hqmq { label, outlier_c } => {
            let mut cc = CodecConfig::new(label.secondary_size, label.radius_bits, seed);
            if let Some(c) = outlier_c {
                cc = cc.with_outlier(OutlierPolicy::new(c)?);
            }
            let books = cc.codebooks(shape.heads)?;
            let qt = encode_tensor_with(data, shape, cc, &books)?;
            let base = budget(label.secondary_size, label.radius_bits, shape.head_dim, BitMode::Fractional)?
                .per_element_with_scale;
            let p = qt.outlier_fraction();
            let bits = if outlier_c.is_some() { effective_bits(base, p, 4.0) } else { base };
            (decode_tensor_with(&qt, &books)?, bits, p)
        }
        SweepConfig::NaiveInt { bits, outlier_c } => {
            let mut nc = NaiveIntConfig::new(bits);
            if let Some(c) = outlier_c {
                nc = nc.with_outlier(OutlierPolicy::new(c)?);
            }
            let base = nc.bits_per_element(shape.head_dim);
            let (b, p) = match outlier_c {
                Some(c) => {
                    let p = naive_outlier_fraction(data, &shape, c)?;
                    (effective_bits(base, p, 4.0), p)
                }
                None => (base, 0.0),
            };
            (naive_int_roundtrip(data, shape, nc)?, b, p)
        }
        SweepConfig::Additive { k, radius_bits } => {
            let pair = AdditiveCodebookPair::seeded(k, seed)?;
            let bits = pair.bits_per_chunk(radius_bits) / 4.0 * crate::budget::padding_factor(shape.head_dim)
                + 16.0 / shape.head_dim as f64;
            (additive_vq_roundtrip(data, shape, &pair, radius_bits)?, bits, 0.0)
        }
    };
    Ok(DistortionReport {
        label: config.to_string(),
        bits_per_element: bits,
        metrics: distortion(data, &recon, &shape)?,
        outlier_p: p,
    })
}

/// One report per config, in the order given.
pub fn pareto_sweep(
    configs: &[SweepConfig],
    profile: SynthProfile,
    shape: TensorShape,
    seed: u64,
) -> Result<Vec<DistortionReport>> {
    let data = gen_chunks(profile, shape, seed)?;
    configs.par_iter().map(|&c| evaluate(c, &data, shape, seed)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSweepPoint {
    pub c: f64,
    pub report: DistortionReport,
}

/// HQMQ at `label` with extraction at each multiplier in `c_values`.
pub fn outlier_sweep(
    c_values: &[f64],
    profile: SynthProfile,
    shape: TensorShape,
    label: HqmqLabel,
    seed: u64,
) -> Result<Vec<OutlierSweepPoint>> {
    if c_values.windows(2).any(|w| w[1] <= w[0]) || c_values.iter().any(|&c| !(c > 0.0)) {
        return Err(invalid("outlier multipliers must be positive and ascending"));
    }
    let data = gen_chunks(profile, shape, seed)?;
    c_values
        .par_iter()
        .map(|&c| {
            let report = evaluate(SweepConfig::Hqmq { label, outlier_c: Some(c) }, &data, shape, seed)?;
            Ok(OutlierSweepPoint { c, report })
        })
        .collect()
}

/// CSV with columns
/// `config,bits_per_element,mean_angle_rad,p95_angle_rad,rel_frob,outlier_p`.
pub fn reports_csv(reports: &[DistortionReport]) -> String {
    let mut out = String::from("config,bits_per_element,mean_angle_rad,p95_angle_rad,rel_frob,outlier_p\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.4},{:.6},{:.6},{:.6},{:.6}",
            r.label, r.bits_per_element, r.metrics.mean_angle, r.metrics.p95_angle, r.metrics.rel_frob, r.outlier_p
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// CDF of the chi distribution with 4 degrees of freedom.
    fn chi4_cdf(r: f64) -> f64 {
        let h = r * r / 2.0;
        1.0 - (-h).exp() * (1.0 + h)
    }

    #[test]
    fn gaussian_norms_follow_chi4() {
        // Oracle: mean = sqrt(2) Γ(5/2) / Γ(2) = 3 sqrt(2π) / 4; median by
        // bisection on the closed-form CDF.
        let mean = 3.0 * (2.0 * std::f64::consts::PI).sqrt() / 4.0;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi4_cdf(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let analytic = mean / lo;

        let shape = TensorShape::new(1, 4, 25_000, 4).unwrap();
        let data = gen_chunks(SynthProfile::GAUSSIAN, shape, 3).unwrap();
        let mut norms = chunk_norms(&data, &shape);
        assert_eq!(norms.len(), 100_000);
        let m = norms.iter().sum::<f64>() / norms.len() as f64;
        norms.sort_by(f64::total_cmp);
        let median = norms[norms.len() / 2];
        assert!(((m / median) / analytic - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_variance_is_constant() {
        let shape = TensorShape::new(1, 2, 10, 8).unwrap();
        let data = gen_chunks(SynthProfile::Gaussian { std: 0.0 }, shape, 1).unwrap();
        assert!(data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let shape = TensorShape::new(1, 2, 16, 32).unwrap();
        let a = gen_chunks(SynthProfile::OUTLIER_HEAVY, shape, 9).unwrap();
        let b = gen_chunks(SynthProfile::OUTLIER_HEAVY, shape, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_labels_round_trip() {
        for s in ["s24_r3", "s192_r6+med3", "int4", "int3+med3", "add24_r3", "s96_r4+med2.5"] {
            let c: SweepConfig = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert!("add24_r3+med3".parse::<SweepConfig>().is_err());
        assert!("bogus".parse::<SweepConfig>().is_err());
    }

    #[test]
    fn zero_reconstruction_counts_as_right_angle() {
        let shape = TensorShape::new(1, 1, 1, 4).unwrap();
        let m = distortion(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], &shape).unwrap();
        assert_eq!(m.mean_angle, std::f64::consts::FRAC_PI_2);
        assert_eq!(m.rel_frob, 1.0);
    }

    #[test]
    fn sweep_bits_match_budget() {
        let shape = TensorShape::new(1, 2, 16, 128).unwrap();
        let reports = pareto_sweep(&["s24_r3".parse().unwrap(), "int3".parse().unwrap()], SynthProfile::GAUSSIAN, shape, 1).unwrap();
        let b = budget(24, 3, 128, BitMode::Fractional).unwrap();
        assert_eq!(reports[0].bits_per_element, b.per_element_with_scale);
        assert_eq!(reports[1].bits_per_element, 3.125);
        assert!(reports_csv(&reports).starts_with("config,bits_per_element,mean_angle_rad,p95_angle_rad,rel_frob,outlier_p\ns24_r3,"));
    }
}

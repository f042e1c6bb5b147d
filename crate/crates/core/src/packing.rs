//! Monte-Carlo study of how well joint codebooks cover S³.
//!
//! The covering radius is estimated as the largest nearest-codeword angle
//! over Haar probes, which approaches the true value from below. Probes
//! are drawn in fixed-size blocks, block `b` from
//! `SeededRng::stream(probe_seed, b)`. The first `n` probes are therefore
//! the same whatever the total count, and blocks can be evaluated in
//! parallel. Block results are reduced in block order.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::hurwitz::build_2t;
use crate::joint::{build_joint, build_secondary, JointCodebook, Role};
use crate::quat::{haar_sample, Quaternion};
use crate::rng::SeededRng;

pub const PROBE_BLOCK: usize = 4096;
pub const MIN_PROBES: usize = 1000;
/// Codewords closer than this are counted as one.
pub const DISTINCT_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoveringEstimate {
    pub secondary_size: usize,
    pub codebook_size: usize,
    pub seed: u64,
    pub n_probes: usize,
    /// Largest probe-to-nearest-codeword angle, radians.
    pub rho_hat: f64,
    pub mean_angular_error: f64,
}

/// Probe `i` of the stream keyed by `probe_seed`.
pub fn probes(probe_seed: u64, n: usize) -> Vec<Quaternion> {
    (0..n.div_ceil(PROBE_BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| {
            let len = PROBE_BLOCK.min(n - b * PROBE_BLOCK);
            let mut rng = SeededRng::stream(probe_seed, b as u64);
            (0..len).map(move |_| haar_sample(&mut rng))
        })
        .collect()
}

/// Nearest-codeword angle of each probe.
pub fn nearest_angles(jc: &JointCodebook, probes: &[Quaternion]) -> Vec<f64> {
    probes
        .par_iter()
        .map(|&u| jc.nearest_unchecked(u).cosine.acos())
        .collect()
}

/// `(max, mean)` of a list of angles; block sums are added in order.
fn max_and_mean(angles: &[f64]) -> (f64, f64) {
    let max = angles.iter().copied().fold(0.0, f64::max);
    let sum: f64 = angles.chunks(PROBE_BLOCK).map(|b| b.iter().sum::<f64>()).sum();
    (max, sum / angles.len().max(1) as f64)
}

pub fn estimate_covering(jc: &JointCodebook, n_probes: usize, probe_seed: u64) -> Result<CoveringEstimate> {
    if n_probes < MIN_PROBES {
        return Err(invalid(format!("need at least {MIN_PROBES} probes, got {n_probes}")));
    }
    let angles = nearest_angles(jc, &probes(probe_seed, n_probes));
    let (rho_hat, mean) = max_and_mean(&angles);
    Ok(CoveringEstimate {
        secondary_size: jc.secondary_size(),
        codebook_size: jc.len(),
        seed: jc.secondary().key().map_or(0, |k| k.seed),
        n_probes,
        rho_hat,
        mean_angular_error: mean,
    })
}

/// Angle between unit vectors, accurate for tiny separations.
fn chord_angle(a: Quaternion, b: Quaternion) -> f64 {
    2.0 * ((a - b).norm() / 2.0).min(1.0).asin()
}

/// Number of codewords at least [`DISTINCT_ANGLE`] from every earlier
/// codeword, and the smallest pairwise angle.
pub fn check_distinctness(jc: &JointCodebook) -> (usize, f64) {
    let cw = jc.codewords();
    let per_row: Vec<(bool, f64)> = (0..cw.len())
        .into_par_iter()
        .map(|i| {
            let mut min_before = f64::INFINITY;
            for j in 0..i {
                min_before = min_before.min(chord_angle(cw[i], cw[j]));
            }
            (min_before > DISTINCT_ANGLE, min_before)
        })
        .collect();
    let count = per_row.iter().filter(|(d, _)| *d).count();
    let min = per_row.iter().map(|(_, m)| *m).fold(f64::INFINITY, f64::min);
    (count, min)
}

/// Least-squares line through `(ln size, ln value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Fits `ln value = intercept + slope · ln size`.
pub fn fit_rate(samples: &[(f64, f64)]) -> Result<RateFit> {
    if samples.len() < 3 {
        return Err(invalid("a rate fit needs at least 3 points"));
    }
    if samples.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(invalid("rate fit points must be positive"));
    }
    let points: Vec<(f64, f64)> = samples.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("rate fit needs distinct sizes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RateFit { points, slope, intercept, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringRateStudy {
    pub estimates: Vec<CoveringEstimate>,
    /// Fit of `rho_hat` against `24 S`.
    pub rho_fit: RateFit,
    /// Fit of the mean angular error against `24 S`.
    pub mean_fit: RateFit,
}

/// Covering estimates for nested seeded codebooks (prefixes of the largest
/// one) and their log-log fits against `24 S`.
pub fn fit_covering_rate(
    secondary_sizes: &[usize],
    seed: u64,
    n_probes: usize,
    probe_seed: u64,
) -> Result<CoveringRateStudy> {
    let (&min, &max) = match (secondary_sizes.iter().min(), secondary_sizes.iter().max()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(invalid("no sizes given")),
    };
    if secondary_sizes.len() < 3 || min == 0 || max < 4 * min {
        return Err(invalid("need at least 3 sizes spanning two octaves"));
    }
    let longest = build_secondary(seed, 0, 0, Role::Key, max)?;
    let primary = build_2t();
    let probe_set = probes(probe_seed, n_probes.max(MIN_PROBES));
    let mut estimates = Vec::with_capacity(secondary_sizes.len());
    for &s in secondary_sizes {
        let jc = build_joint(&primary, &longest.prefix(s)?);
        let (rho_hat, mean) = max_and_mean(&nearest_angles(&jc, &probe_set));
        estimates.push(CoveringEstimate {
            secondary_size: s,
            codebook_size: jc.len(),
            seed,
            n_probes: probe_set.len(),
            rho_hat,
            mean_angular_error: mean,
        });
    }
    let rho_fit = fit_rate(&estimates.iter().map(|e| (e.codebook_size as f64, e.rho_hat)).collect::<Vec<_>>())?;
    let mean_fit =
        fit_rate(&estimates.iter().map(|e| (e.codebook_size as f64, e.mean_angular_error)).collect::<Vec<_>>())?;
    Ok(CoveringRateStudy { estimates, rho_fit, mean_fit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedVariance {
    /// `(seed, mean angular distortion)` per seed.
    pub per_seed: Vec<(u64, f64)>,
    /// Population standard deviation over the mean.
    pub coefficient_of_variation: f64,
}

/// Mean nearest-codeword angle over a fixed direction sample for each
/// seed's codebook (layer 0, head 0, role K), and its spread.
pub fn seed_variance(secondary_size: usize, seeds: &[u64], sample: &[Quaternion]) -> Result<SeedVariance> {
    if seeds.is_empty() || sample.is_empty() {
        return Err(invalid("seed_variance needs seeds and a direction sample"));
    }
    let primary = build_2t();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let jc = build_joint(&primary, &build_secondary(seed, 0, 0, Role::Key, secondary_size)?);
        let (_, mean) = max_and_mean(&nearest_angles(&jc, sample));
        per_seed.push((seed, mean));
    }
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / n;
    let var = per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
    Ok(SeedVariance { per_seed, coefficient_of_variation: var.sqrt() / mean })
}

/// CSV with columns `S,seed,n_probes,rho_hat_rad,mean_rad`.
pub fn covering_csv(estimates: &[CoveringEstimate]) -> String {
    let mut out = String::from("S,seed,n_probes,rho_hat_rad,mean_rad\n");
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{},{},{:.9},{:.9}",
            e.secondary_size, e.seed, e.n_probes, e.rho_hat, e.mean_angular_error
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::SecondaryCodebook;

    #[test]
    fn probe_prefix_property() {
        let a = probes(3, 5000);
        let b = probes(3, 10_000);
        assert_eq!(a[..], b[..5000]);
    }

    #[test]
    fn more_probes_never_shrink_rho() {
        let jc = JointCodebook::seeded(1, 0, 0, Role::Key, 8).unwrap();
        let small = estimate_covering(&jc, 5000, 9).unwrap();
        let large = estimate_covering(&jc, 10_000, 9).unwrap();
        assert!(large.rho_hat >= small.rho_hat);
        assert!(small.rho_hat >= small.mean_angular_error);
        assert!(small.rho_hat <= std::f64::consts::PI);
    }

    #[test]
    fn too_few_probes() {
        let jc = JointCodebook::seeded(1, 0, 0, Role::Key, 1).unwrap();
        assert!(estimate_covering(&jc, 10, 0).is_err());
    }

    #[test]
    fn distinctness_counts() {
        let jc = JointCodebook::seeded(12, 0, 0, Role::Key, 24).unwrap();
        assert_eq!(check_distinctness(&jc).0, 576);

        let dup = SecondaryCodebook::from_entries(vec![Quaternion::ONE, Quaternion::ONE]).unwrap();
        let (count, min) = check_distinctness(&build_joint(&build_2t(), &dup));
        assert_eq!(count, 24);
        assert_eq!(min, 0.0);

        let coset = SecondaryCodebook::from_entries(vec![Quaternion::ONE, Quaternion::new(0.5, 0.5, 0.5, 0.5)]).unwrap();
        assert_eq!(check_distinctness(&build_joint(&build_2t(), &coset)).0, 24);
    }

    #[test]
    fn rate_fit_recovers_known_slope() {
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].iter().map(|&x: &f64| (x, 2.0 * x.powf(-1.0 / 3.0))).collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!((fit.intercept - 2.0f64.ln()).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn constant_codebook_has_flat_rate() {
        // Repeating the identity adds labels but no codewords.
        let probe_set = probes(4, 20_000);
        let samples: Vec<(f64, f64)> = [1usize, 4, 16]
            .iter()
            .map(|&s| {
                let sec = SecondaryCodebook::from_entries(vec![Quaternion::ONE; s]).unwrap();
                let jc = build_joint(&build_2t(), &sec);
                (24.0 * s as f64, max_and_mean(&nearest_angles(&jc, &probe_set)).0)
            })
            .collect();
        assert!(fit_rate(&samples).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn nested_codebooks_cover_monotonically() {
        let longest = build_secondary(21, 0, 0, Role::Key, 192).unwrap();
        let probe_set = probes(5, 20_000);
        let mut last = (f64::INFINITY, f64::INFINITY);
        for s in [24, 48, 96, 192] {
            let jc = build_joint(&build_2t(), &longest.prefix(s).unwrap());
            let (rho, mean) = max_and_mean(&nearest_angles(&jc, &probe_set));
            assert!(rho <= last.0 && mean <= last.1);
            last = (rho, mean);
        }
    }

    #[test]
    fn single_or_repeated_seed_has_zero_cov() {
        let sample = probes(6, 2000);
        assert_eq!(seed_variance(24, &[5], &sample).unwrap().coefficient_of_variation, 0.0);
        assert_eq!(seed_variance(24, &[5, 5, 5], &sample).unwrap().coefficient_of_variation, 0.0);
    }

    #[test]
    fn csv_layout() {
        let jc = JointCodebook::seeded(1, 0, 0, Role::Key, 2).unwrap();
        let e = estimate_covering(&jc, 1000, 0).unwrap();
        let csv = covering_csv(&[e]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("S,seed,n_probes,rho_hat_rad,mean_rad"));
        assert!(lines.next().unwrap().starts_with("2,1,1000,"));
    }
}

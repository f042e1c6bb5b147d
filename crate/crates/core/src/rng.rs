//! Portable seeded randomness.
//!
//! Every random quantity in the crate comes from [`SeededRng`], a
//! xoshiro256** generator whose 256-bit state is filled from a 64-bit seed
//! with four successive SplitMix64 outputs. Both algorithms are the public
//! reference versions by Blackman and Vigna, so a seed reproduces the same
//! stream in any language that implements them.
//!
//! Uniform doubles use the top 53 bits of a draw: `(x >> 11) * 2^-53`.
//! Gaussians use the Box–Muller transform on two such uniforms:
//!
//! ```text
//! u1 = 1 - uniform()          // in (0, 1], so ln(u1) is finite
//! u2 = uniform()
//! r  = sqrt(-2 ln u1)
//! g0 = r cos(2 pi u2),  g1 = r sin(2 pi u2)
//! ```
//!
//! Both outputs of a pair are used; a pending second value is cached.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function applied to `z`.
#[inline]
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one 64-bit seed.
///
/// `h = mix(seed + gamma)`, then for each word `w`:
/// `h = mix(h ^ mix(w + gamma))`. Used to derive per-(layer, head, role)
/// sub-seeds and per-stream seeds.
pub fn mix64(seed: u64, words: &[u64]) -> u64 {
    let mut h = splitmix64_mix(seed.wrapping_add(GOLDEN_GAMMA));
    for &w in words {
        h = splitmix64_mix(h ^ splitmix64_mix(w.wrapping_add(GOLDEN_GAMMA)));
    }
    h
}

/// xoshiro256** with SplitMix64 seeding and a Box–Muller normal sampler.
#[derive(Debug, Clone)]
pub struct SeededRng {
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            sm = sm.wrapping_add(GOLDEN_GAMMA);
            *slot = splitmix64_mix(sm);
        }
        Self { s, spare_normal: None }
    }

    /// An independent stream derived from `(seed, stream_id)`.
    pub fn stream(seed: u64, stream_id: u64) -> Self {
        Self::new(mix64(seed, &[stream_id]))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by rejection; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xoshiro_reference_vector() {
        // State {1, 2, 3, 4} gives 11520, 0, 1509978240, 1215971899390074240
        // with the reference C implementation.
        let mut rng = SeededRng { s: [1, 2, 3, 4], spare_normal: None };
        assert_eq!(rng.next_u64(), 11520);
        assert_eq!(rng.next_u64(), 0);
        assert_eq!(rng.next_u64(), 1_509_978_240);
        assert_eq!(rng.next_u64(), 1_215_971_899_390_074_240);
    }

    #[test]
    fn splitmix_reference_vector() {
        // SplitMix64 seeded with 0: first output is 0xE220A8397B1DCDAF.
        assert_eq!(splitmix64_mix(GOLDEN_GAMMA), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SeededRng::stream(42, 1);
        let mut d = SeededRng::stream(42, 2);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut rng = SeededRng::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn below_is_in_range() {
        let mut rng = SeededRng::new(3);
        for n in [1u64, 2, 3, 7, 1000] {
            for _ in 0..100 {
                assert!(rng.below(n) < n);
            }
        }
    }
}

//! Quaternion arithmetic on 4-element chunks.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{invalid, HqmqError, Result};
use crate::rng::SeededRng;

/// Tolerance on `|‖q‖ - 1|` accepted by [`angle`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// `w + x i + y j + z k`. Used both for data chunks and for codewords.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);

    #[inline]
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    #[inline]
    pub const fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    #[inline]
    pub const fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, other: Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        norm(self)
    }

    #[inline]
    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    #[inline]
    pub fn scale(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalize(self) -> Result<Self> {
        normalize(self)
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    #[inline]
    fn mul(self, rhs: Quaternion) -> Quaternion {
        hamilton(self, rhs)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;

    #[inline]
    fn add(self, r: Quaternion) -> Quaternion {
        Quaternion::new(self.w + r.w, self.x + r.x, self.y + r.y, self.z + r.z)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;

    #[inline]
    fn sub(self, r: Quaternion) -> Quaternion {
        Quaternion::new(self.w - r.w, self.x - r.x, self.y - r.y, self.z - r.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    #[inline]
    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Hamilton product `a · b`.
#[inline]
pub fn hamilton(a: Quaternion, b: Quaternion) -> Quaternion {
    Quaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

#[inline]
pub fn norm(q: Quaternion) -> f64 {
    q.norm_squared().sqrt()
}

pub fn normalize(q: Quaternion) -> Result<Quaternion> {
    let n = norm(q);
    if n == 0.0 || !n.is_finite() {
        return Err(HqmqError::DegenerateChunk);
    }
    Ok(q.scale(1.0 / n))
}

/// Angle in `[0, π]` between two unit quaternions.
pub fn angle(a: Quaternion, b: Quaternion) -> Result<f64> {
    if !a.is_unit(UNIT_TOLERANCE) || !b.is_unit(UNIT_TOLERANCE) {
        return Err(invalid("angle requires unit-norm quaternions"));
    }
    Ok(angle_unchecked(a, b))
}

/// [`angle`] without the unit-norm check.
#[inline]
pub fn angle_unchecked(a: Quaternion, b: Quaternion) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Haar-uniform draw on S³: four Box–Muller normals, normalized.
///
/// An all-zero draw is rejected and redrawn.
pub fn haar_sample(rng: &mut SeededRng) -> Quaternion {
    loop {
        let q = Quaternion::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if let Ok(u) = normalize(q) {
            return u;
        }
    }
}

/// `n` consecutive Haar draws from one stream.
pub fn haar_samples(rng: &mut SeededRng, n: usize) -> Vec<Quaternion> {
    (0..n).map(|_| haar_sample(rng)).collect()
}

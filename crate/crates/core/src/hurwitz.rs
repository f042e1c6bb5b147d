//! The 24 unit Hurwitz quaternions (the binary tetrahedral group 2T).
//!
//! Index order is fixed because the packed format stores flat codeword
//! indices. The axis elements come first as `+1, -1, +i, -i, +j, -j, +k, -k`.
//! The half-integer elements `½(±1 ±i ±j ±k)` follow in lexicographic sign
//! order with `+` before `-`, the `w` sign most significant. So index 8 is
//! `½(1, 1, 1, 1)`, index 9 is `½(1, 1, 1, -1)` and index 23 is
//! `½(-1, -1, -1, -1)`.
//!
//! All components are in `{0, ±½, ±1}`. These values are exact in binary
//! floating point, and so are all products of two elements. Closure can
//! therefore be checked with exact equality.

use crate::quat::{angle_unchecked, hamilton, Quaternion};

pub const PRIMARY_SIZE: usize = 24;

/// Pairwise angles in degrees that can occur between distinct 2T elements.
pub const ANGLE_SPECTRUM_DEG: [u32; 4] = [60, 90, 120, 180];

#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryCodebook {
    entries: [Quaternion; PRIMARY_SIZE],
}

/// Summary of an exhaustive check of the group axioms.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub closure: bool,
    /// `products[a][b]` is the index of `entries[a] · entries[b]`, if any.
    pub products: Vec<Vec<Option<usize>>>,
    pub identity: Option<usize>,
    /// Index of each entry's inverse, if one exists in the set.
    pub inverses: Vec<Option<usize>>,
    /// Counts of pairwise angles between distinct entries, keyed by whole
    /// degrees. Angles that are not whole degrees within 1e-9 land in
    /// `irregular_angles`.
    pub angle_histogram: Vec<(u32, usize)>,
    pub irregular_angles: usize,
    pub min_angle_deg: f64,
}

impl GroupReport {
    pub fn all_inverses(&self) -> bool {
        self.inverses.iter().all(Option::is_some)
    }

    pub fn angles_in_spectrum(&self) -> bool {
        self.irregular_angles == 0
            && self
                .angle_histogram
                .iter()
                .all(|(deg, _)| ANGLE_SPECTRUM_DEG.contains(deg))
    }

    /// Closure, identity, inverses, 60° minimum and the angle spectrum.
    pub fn is_ok(&self) -> bool {
        self.closure
            && self.identity.is_some()
            && self.all_inverses()
            && (self.min_angle_deg - 60.0).abs() < 1e-9
            && self.angles_in_spectrum()
    }
}

impl PrimaryCodebook {
    pub fn entries(&self) -> &[Quaternion; PRIMARY_SIZE] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<Quaternion> {
        self.entries.get(index).copied()
    }

    /// Exact lookup; components must match bit for bit.
    pub fn index_of(&self, q: Quaternion) -> Option<usize> {
        self.entries.iter().position(|e| *e == q)
    }

    pub fn len(&self) -> usize {
        PRIMARY_SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Builds 2T in the canonical order described in the module docs.
pub fn build_2t() -> PrimaryCodebook {
    let mut entries = [Quaternion::ZERO; PRIMARY_SIZE];
    for axis in 0..4 {
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut c = [0.0; 4];
            c[axis] = sign;
            entries[2 * axis + k] = Quaternion::from_array(c);
        }
    }
    for pattern in 0..16usize {
        let mut c = [0.5; 4];
        for (bit, comp) in c.iter_mut().enumerate() {
            if pattern & (1 << (3 - bit)) != 0 {
                *comp = -0.5;
            }
        }
        entries[8 + pattern] = Quaternion::from_array(c);
    }
    PrimaryCodebook { entries }
}

pub fn verify_group(cb: &PrimaryCodebook) -> GroupReport {
    let n = cb.len();
    let products: Vec<Vec<Option<usize>>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| cb.index_of(hamilton(cb.entries[a], cb.entries[b])))
                .collect()
        })
        .collect();
    let closure = products.iter().flatten().all(Option::is_some);

    let identity = (0..n).find(|&e| {
        (0..n).all(|a| products[e][a] == Some(a) && products[a][e] == Some(a))
    });
    let inverses = (0..n)
        .map(|a| {
            identity.and_then(|e| {
                (0..n).find(|&b| products[a][b] == Some(e) && products[b][a] == Some(e))
            })
        })
        .collect();

    let mut histogram = std::collections::BTreeMap::<u32, usize>::new();
    let mut irregular = 0;
    let mut min_angle = f64::INFINITY;
    for a in 0..n {
        for b in (a + 1)..n {
            let deg = angle_unchecked(cb.entries[a], cb.entries[b]).to_degrees();
            min_angle = min_angle.min(deg);
            let rounded = deg.round();
            if (deg - rounded).abs() < 1e-9 {
                *histogram.entry(rounded as u32).or_default() += 1;
            } else {
                irregular += 1;
            }
        }
    }

    GroupReport {
        closure,
        products,
        identity,
        inverses,
        angle_histogram: histogram.into_iter().collect(),
        irregular_angles: irregular,
        min_angle_deg: min_angle,
    }
}

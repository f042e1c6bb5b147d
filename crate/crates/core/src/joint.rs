//! Seeded secondary codebooks and the multiplicative joint codebook.
//!
//! The joint codebook for one (layer, head, role) is the product set
//! `{ p · s : p ∈ 2T, s ∈ secondary }`, materialized as a flat table with
//! index `p_idx * S + s_idx`.
//!
//! Secondary entries are Haar draws from a [`SeededRng`] seeded with
//! `mix64(seed, [layer, head, role_tag])` (see [`crate::rng::mix64`]), with
//! role tags `K = 0`, `V = 1`. Entry `i` does not depend on `S`, so the
//! codebook for a smaller `S` is a prefix of the one for a larger `S`.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, HqmqError, Result};
use crate::hurwitz::{build_2t, PrimaryCodebook, PRIMARY_SIZE};
use crate::quat::{hamilton, haar_sample, Quaternion, UNIT_TOLERANCE};
use crate::rng::{mix64, SeededRng};

/// Which cache tensor a codebook serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Role {
    #[default]
    Key,
    Value,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Key => 0,
            Role::Value => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Role> {
        match tag {
            0 => Some(Role::Key),
            1 => Some(Role::Value),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Key => "K",
            Role::Value => "V",
        })
    }
}

impl FromStr for Role {
    type Err = HqmqError;

    fn from_str(s: &str) -> Result<Role> {
        match s {
            "K" | "k" | "key" => Ok(Role::Key),
            "V" | "v" | "value" => Ok(Role::Value),
            other => Err(invalid(format!("unknown role {other:?}, expected K or V"))),
        }
    }
}

/// Identifies the seeded stream a secondary codebook was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodebookKey {
    pub seed: u64,
    pub layer: u32,
    pub head: u32,
    pub role: Role,
}

impl CodebookKey {
    pub fn sub_seed(&self) -> u64 {
        mix64(
            self.seed,
            &[self.layer as u64, self.head as u64, self.role.tag() as u64],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryCodebook {
    entries: Vec<Quaternion>,
    /// `None` for hand-built codebooks.
    key: Option<CodebookKey>,
}

impl SecondaryCodebook {
    /// A hand-built secondary codebook. Entries are normalized.
    pub fn from_entries(entries: Vec<Quaternion>) -> Result<Self> {
        if entries.is_empty() {
            return Err(invalid("secondary codebook needs at least one entry"));
        }
        let entries = entries
            .into_iter()
            .map(Quaternion::normalize)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, key: None })
    }

    pub fn identity() -> Self {
        Self { entries: vec![Quaternion::ONE], key: None }
    }

    pub fn entries(&self) -> &[Quaternion] {
        &self.entries
    }

    pub fn key(&self) -> Option<CodebookKey> {
        self.key
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `s` entries. For seeded codebooks this equals building
    /// with size `s` directly.
    pub fn prefix(&self, s: usize) -> Result<Self> {
        if s == 0 || s > self.entries.len() {
            return Err(invalid(format!("prefix length {s} out of range")));
        }
        Ok(Self { entries: self.entries[..s].to_vec(), key: self.key })
    }
}

pub fn build_secondary(seed: u64, layer: u32, head: u32, role: Role, s: usize) -> Result<SecondaryCodebook> {
    if s == 0 {
        return Err(invalid("secondary codebook size S must be at least 1"));
    }
    let key = CodebookKey { seed, layer, head, role };
    let mut rng = SeededRng::new(key.sub_seed());
    let entries = (0..s).map(|_| haar_sample(&mut rng)).collect();
    Ok(SecondaryCodebook { entries, key: Some(key) })
}

/// Result of a nearest-codeword search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub primary: usize,
    pub secondary: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointCodebook {
    codewords: Vec<Quaternion>,
    primary: PrimaryCodebook,
    secondary: SecondaryCodebook,
}

pub fn build_joint(primary: &PrimaryCodebook, secondary: &SecondaryCodebook) -> JointCodebook {
    let s = secondary.len();
    let mut codewords = Vec::with_capacity(PRIMARY_SIZE * s);
    for &p in primary.entries() {
        for &q in secondary.entries() {
            codewords.push(hamilton(p, q));
        }
    }
    JointCodebook { codewords, primary: primary.clone(), secondary: secondary.clone() }
}

/// Rows scanned per block by [`JointCodebook::nearest_blocked`].
pub const SCAN_BLOCK: usize = 64;

impl JointCodebook {
    /// Seeded codebook for one (layer, head, role).
    pub fn seeded(seed: u64, layer: u32, head: u32, role: Role, s: usize) -> Result<Self> {
        let secondary = build_secondary(seed, layer, head, role, s)?;
        Ok(build_joint(&build_2t(), &secondary))
    }

    pub fn codewords(&self) -> &[Quaternion] {
        &self.codewords
    }

    pub fn primary(&self) -> &PrimaryCodebook {
        &self.primary
    }

    pub fn secondary(&self) -> &SecondaryCodebook {
        &self.secondary
    }

    /// `S`, the secondary codebook size.
    pub fn secondary_size(&self) -> usize {
        self.secondary.len()
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codeword(&self, index: usize) -> Option<Quaternion> {
        self.codewords.get(index).copied()
    }

    pub fn split_index(&self, index: usize) -> (usize, usize) {
        let s = self.secondary_size();
        (index / s, index % s)
    }

    /// Exhaustive argmax of `⟨u, c⟩`; ties go to the lowest flat index.
    pub fn nearest(&self, u: Quaternion) -> Result<Nearest> {
        check_unit(u)?;
        Ok(self.nearest_unchecked(u))
    }

    /// [`Self::nearest`] without the unit-norm check.
    pub fn nearest_unchecked(&self, u: Quaternion) -> Nearest {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, c) in self.codewords.iter().enumerate() {
            let d = u.dot(*c);
            if d > best_dot {
                best_dot = d;
                best = i;
            }
        }
        self.make_nearest(best, best_dot)
    }

    /// Block-wise scan: each block of [`SCAN_BLOCK`] rows is reduced on its
    /// own, then block winners are merged in order. Returns exactly the
    /// same index as [`Self::nearest`].
    pub fn nearest_blocked(&self, u: Quaternion) -> Result<Nearest> {
        check_unit(u)?;
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (b, block) in self.codewords.chunks(SCAN_BLOCK).enumerate() {
            let mut local = 0;
            let mut local_dot = f64::NEG_INFINITY;
            for (i, c) in block.iter().enumerate() {
                let d = u.dot(*c);
                if d > local_dot {
                    local_dot = d;
                    local = i;
                }
            }
            if local_dot > best_dot {
                best_dot = local_dot;
                best = b * SCAN_BLOCK + local;
            }
        }
        Ok(self.make_nearest(best, best_dot))
    }

    fn make_nearest(&self, index: usize, dot: f64) -> Nearest {
        let (primary, secondary) = self.split_index(index);
        Nearest { index, primary, secondary, cosine: dot.clamp(-1.0, 1.0) }
    }
}

fn check_unit(u: Quaternion) -> Result<()> {
    if u.is_unit(UNIT_TOLERANCE) {
        Ok(())
    } else {
        Err(invalid("nearest requires a unit-norm direction"))
    }
}

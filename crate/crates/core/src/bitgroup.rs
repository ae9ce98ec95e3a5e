//! GF(2) algebra of interaction masks.
//!
//! An interaction `X_Λ = ∏ X_j^{Λ_j}` of a `±1` vector is identified with its
//! exponent pattern `Λ`. Multiplying interactions XORs their masks, so the
//! multiplicative group generated by a set of interactions is the GF(2)
//! linear span of their masks.
//!
//! Coordinate `X_1` is the most significant bit of a mask. With that
//! convention the Sylvester Hadamard matrix satisfies
//! `H[Λ, b] = (-1)^popcount(Λ & b)` and the cell index of a pmf uses the
//! same bit order.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::engine::Partition;
use crate::error::{Error, Result};
use crate::MAX_WIDTH;

/// An interaction index over `width` base coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: u32,
    width: u8,
}

impl Mask {
    pub fn new(bits: u32, width: usize) -> Result<Self> {
        if width > MAX_WIDTH {
            return Err(Error::WidthTooLarge(width));
        }
        if width < 32 && bits >> width != 0 {
            return Err(Error::InvalidMask(
                format!("{bits:#b}"),
                format!("does not fit in width {width}"),
            ));
        }
        Ok(Self { bits, width: width as u8 })
    }

    /// The constant interaction `1`.
    pub fn zero(width: usize) -> Self {
        assert!(width <= MAX_WIDTH);
        Self { bits: 0, width: width as u8 }
    }

    /// Mask of the single base coordinate `X_{j+1}` (0-based `j`).
    pub fn coordinate(j: usize, width: usize) -> Result<Self> {
        if j >= width {
            return Err(Error::InvalidMask(
                format!("coordinate {j}"),
                format!("out of range for width {width}"),
            ));
        }
        Self::new(1 << (width - 1 - j), width)
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn width(self) -> usize {
        self.width as usize
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.bits == 0
    }

    /// Whether coordinate `j` (0-based, `X_1` first) participates.
    #[inline]
    pub fn has_coordinate(self, j: usize) -> bool {
        (self.bits >> (self.width() - 1 - j)) & 1 == 1
    }

    /// Value of `X_Λ` on the cell with index `cell` (bit set means `-1`).
    #[inline]
    pub fn sign_at(self, cell: usize) -> f64 {
        if (self.bits as usize & cell).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn product(self, other: Mask) -> Result<Mask> {
        mask_product(self, other)
    }
}

/// Multiplication of interactions: XOR of the masks.
pub fn mask_product(a: Mask, b: Mask) -> Result<Mask> {
    if a.width != b.width {
        return Err(Error::WidthMismatch(a.width(), b.width()));
    }
    Ok(Mask { bits: a.bits ^ b.bits, width: a.width })
}

impl PartialOrd for Mask {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Mask {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.width, self.bits).cmp(&(other.width, other.bits))
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.width() {
            f.write_str(if self.has_coordinate(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Mask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() > MAX_WIDTH {
            return Err(Error::WidthTooLarge(s.len()));
        }
        let mut bits = 0u32;
        for ch in s.chars() {
            bits <<= 1;
            match ch {
                '0' => {}
                '1' => bits |= 1,
                _ => {
                    return Err(Error::InvalidMask(s.to_string(), format!("unexpected character {ch:?}")))
                }
            }
        }
        Mask::new(bits, s.len())
    }
}

impl Serialize for Mask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A GF(2) subspace of masks, kept as a fully reduced echelon basis.
///
/// Basis vectors are sorted by descending pivot (highest set bit), and each
/// pivot bit is cleared from every other basis vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpan {
    basis: Vec<u32>,
    width: usize,
}

impl MaskSpan {
    pub fn empty(width: usize) -> Self {
        Self { basis: Vec::new(), width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Number of elements, `2^dim`, including the zero mask.
    pub fn size(&self) -> usize {
        1 << self.basis.len()
    }

    pub fn basis(&self) -> Vec<Mask> {
        self.basis.iter().map(|&b| Mask { bits: b, width: self.width as u8 }).collect()
    }

    fn reduce_bits(&self, mut bits: u32) -> u32 {
        for &b in &self.basis {
            let pivot = 31 - b.leading_zeros();
            if (bits >> pivot) & 1 == 1 {
                bits ^= b;
            }
        }
        bits
    }

    /// Residue of `m` after elimination against the basis; zero iff `m` is a member.
    pub fn reduce(&self, m: Mask) -> Mask {
        Mask { bits: self.reduce_bits(m.bits), width: m.width }
    }

    pub fn contains(&self, m: Mask) -> bool {
        m.width() == self.width && self.reduce_bits(m.bits) == 0
    }

    /// Adds `m` to the span. Returns whether the dimension grew.
    pub fn insert(&mut self, m: Mask) -> Result<bool> {
        if m.width() != self.width {
            return Err(Error::WidthMismatch(self.width, m.width()));
        }
        let r = self.reduce_bits(m.bits);
        if r == 0 {
            return Ok(false);
        }
        let pivot = 31 - r.leading_zeros();
        for b in &mut self.basis {
            if (*b >> pivot) & 1 == 1 {
                *b ^= r;
            }
        }
        self.basis.push(r);
        self.basis.sort_unstable_by(|a, b| b.cmp(a));
        Ok(true)
    }

    /// Element of the span with coordinates `lambda` in the stored basis.
    ///
    /// Bit `dim - 1 - i` of `lambda` selects basis vector `i`, so the first
    /// basis vector is the most significant coordinate.
    pub fn element(&self, lambda: usize) -> Mask {
        let dim = self.basis.len();
        let mut bits = 0;
        for (i, &b) in self.basis.iter().enumerate() {
            if (lambda >> (dim - 1 - i)) & 1 == 1 {
                bits ^= b;
            }
        }
        Mask { bits, width: self.width as u8 }
    }

    /// All `2^dim` elements in coordinate order (see [`MaskSpan::element`]).
    pub fn elements_by_coordinates(&self) -> Vec<Mask> {
        (0..self.size()).map(|l| self.element(l)).collect()
    }

    /// All elements sorted ascending by integer value, zero first.
    pub fn elements(&self) -> Vec<Mask> {
        let mut out = self.elements_by_coordinates();
        out.sort_unstable();
        out
    }

    pub fn sum(&self, other: &MaskSpan) -> Result<MaskSpan> {
        if self.width != other.width {
            return Err(Error::WidthMismatch(self.width, other.width));
        }
        let mut out = self.clone();
        for m in other.basis() {
            out.insert(m)?;
        }
        Ok(out)
    }

    pub fn intersect(&self, other: &MaskSpan) -> Result<MaskSpan> {
        span_intersect(self, other)
    }

    pub fn is_subspace_of(&self, other: &MaskSpan) -> bool {
        self.width == other.width && self.basis().into_iter().all(|m| other.contains(m))
    }
}

/// GF(2) span of the generators, i.e. the multiplicative group they generate.
pub fn span_generate(gens: &[Mask]) -> Result<MaskSpan> {
    let width = gens.first().map_or(0, |m| m.width());
    span_generate_in(gens, width)
}

/// Like [`span_generate`] but with an explicit width, so an empty generator
/// list still yields a span of the right width.
pub fn span_generate_in(gens: &[Mask], width: usize) -> Result<MaskSpan> {
    let mut span = MaskSpan::empty(width);
    for &g in gens {
        span.insert(g)?;
    }
    Ok(span)
}

/// Zassenhaus intersection: eliminate the stacked rows `[u | u]` and
/// `[v | 0]`; rows whose left half vanishes carry a basis of `u ∩ v`.
pub fn span_intersect(u: &MaskSpan, v: &MaskSpan) -> Result<MaskSpan> {
    if u.width != v.width {
        return Err(Error::WidthMismatch(u.width, v.width));
    }
    let w = u.width as u32;
    let low = (1u64 << w) - 1;
    let mut rows: Vec<u64> = Vec::with_capacity(u.dim() + v.dim());
    let push = |rows: &mut Vec<u64>, mut r: u64| {
        for &b in rows.iter() {
            let pivot = 63 - b.leading_zeros();
            if (r >> pivot) & 1 == 1 {
                r ^= b;
            }
        }
        if r != 0 {
            rows.push(r);
            rows.sort_unstable_by(|a, b| b.cmp(a));
        }
    };
    for &b in &u.basis {
        push(&mut rows, ((b as u64) << w) | b as u64);
    }
    for &b in &v.basis {
        push(&mut rows, (b as u64) << w);
    }
    let mut out = MaskSpan::empty(u.width);
    for r in rows {
        if r >> w == 0 {
            out.insert(Mask { bits: (r & low) as u32, width: u.width as u8 })?;
        }
    }
    Ok(out)
}

/// Ordered index sets of the interaction covariance: center `𝓑 = ⟨B⟩ \ {1}`,
/// left wing `𝓛 = ⟨A,B⟩ \ ⟨B⟩`, right wing `𝓡 = ⟨B,C⟩ \ ⟨B⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub center: Vec<Mask>,
    pub left: Vec<Mask>,
    pub right: Vec<Mask>,
    /// Set when `⟨A,B⟩ ∩ ⟨B,C⟩` is strictly larger than `⟨B⟩`; the masks in
    /// the excess then appear in both wings.
    pub wings_overlap: bool,
}

impl IndexSets {
    pub fn len(&self) -> usize {
        self.center.len() + self.left.len() + self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation in `(𝓑, 𝓛, 𝓡)` order.
    pub fn ordered(&self) -> Vec<Mask> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.center);
        out.extend_from_slice(&self.left);
        out.extend_from_slice(&self.right);
        out
    }
}

pub fn build_index_sets(partition: &Partition) -> Result<IndexSets> {
    let p = partition.p();
    let span_a = span_generate_in(partition.a_gens(), p)?;
    let span_b = span_generate_in(partition.b_gens(), p)?;
    let span_c = span_generate_in(partition.c_gens(), p)?;
    let span_ab = span_a.sum(&span_b)?;
    let span_bc = span_b.sum(&span_c)?;
    let meet = span_intersect(&span_ab, &span_bc)?;

    let center = span_b.elements().into_iter().filter(|m| !m.is_zero()).collect();
    let left = span_ab.elements().into_iter().filter(|&m| !span_b.contains(m)).collect();
    let right = span_bc.elements().into_iter().filter(|&m| !span_b.contains(m)).collect();
    Ok(IndexSets {
        center,
        left,
        right,
        wings_overlap: meet.dim() > span_b.dim(),
    })
}

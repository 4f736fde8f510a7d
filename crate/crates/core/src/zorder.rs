//! Z-order (Morton) keys over fixed-width attribute vectors.
//!
//! Bits are interleaved most-significant round first, attribute 1 first
//! within each round: `B11 B21 .. Bm1 B12 B22 .. Bm2 ..`. When attributes have
//! unequal widths, an attribute whose bits are exhausted is skipped in later
//! rounds, so every attribute's most significant bit sits in the first round.
//!
//! Besides encode/decode this module provides the two data-skipping
//! primitives used by range scans and by the recursive filter:
//! [`AttributeSchema::bigmin`] and [`AttributeSchema::litmax`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};

/// Widest supported key, in bits.
pub const MAX_KEY_BITS: u32 = 128;

/// A tuple's interleaved Z-order bit string.
///
/// Comparing two keys as unsigned integers is the lexicographic comparison
/// under the Z-order bit ordering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZKey(pub u128);

impl ZKey {
    pub const MIN: ZKey = ZKey(0);

    #[inline]
    pub fn get(self) -> u128 {
        self.0
    }
}

impl fmt::Display for ZKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u128> for ZKey {
    fn from(v: u128) -> Self {
        ZKey(v)
    }
}

/// Per-attribute bit widths plus the precomputed interleave layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct AttributeSchema {
    betas: Vec<u8>,
    total_bits: u32,
    /// For each attribute, the z-position (0 = least significant) of each of
    /// its bits, ordered from the attribute's MSB to its LSB.
    positions: Vec<Vec<u32>>,
    /// All z-positions owned by each attribute.
    attr_masks: Vec<u128>,
    /// For each z-position, the positions below it owned by the same attribute.
    lower_same_attr: Vec<u128>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    betas: Vec<u8>,
}

impl TryFrom<SchemaRepr> for AttributeSchema {
    type Error = IceError;

    fn try_from(r: SchemaRepr) -> Result<Self> {
        AttributeSchema::new(r.betas)
    }
}

impl From<AttributeSchema> for SchemaRepr {
    fn from(s: AttributeSchema) -> Self {
        SchemaRepr { betas: s.betas }
    }
}

impl AttributeSchema {
    pub fn new(betas: Vec<u8>) -> Result<Self> {
        if betas.is_empty() {
            return Err(IceError::InvalidSchema("schema needs at least one attribute".into()));
        }
        if let Some(i) = betas.iter().position(|&b| b == 0) {
            return Err(IceError::InvalidSchema(format!("attribute {i} has zero bit width")));
        }
        let total_bits: u32 = betas.iter().map(|&b| b as u32).sum();
        if total_bits > MAX_KEY_BITS {
            return Err(IceError::SchemaTooWide { bits: total_bits });
        }

        let m = betas.len();
        let max_beta = *betas.iter().max().unwrap() as usize;
        let mut positions = vec![Vec::new(); m];
        let mut owner = vec![0usize; total_bits as usize];
        // Walk rounds from the most significant z-position downward.
        let mut next = total_bits;
        for round in 0..max_beta {
            for (attr, &beta) in betas.iter().enumerate() {
                if (beta as usize) > round {
                    next -= 1;
                    positions[attr].push(next);
                    owner[next as usize] = attr;
                }
            }
        }
        debug_assert_eq!(next, 0);

        let attr_masks: Vec<u128> = positions
            .iter()
            .map(|ps| ps.iter().fold(0u128, |acc, &p| acc | (1u128 << p)))
            .collect();
        let lower_same_attr = (0..total_bits)
            .map(|p| attr_masks[owner[p as usize]] & low_bits(p))
            .collect();

        Ok(AttributeSchema { betas, total_bits, positions, attr_masks, lower_same_attr })
    }

    /// Uniform schema: `attrs` attributes of `beta` bits each.
    pub fn uniform(attrs: usize, beta: u8) -> Result<Self> {
        Self::new(vec![beta; attrs])
    }

    pub fn betas(&self) -> &[u8] {
        &self.betas
    }

    pub fn attrs(&self) -> usize {
        self.betas.len()
    }

    /// Total key width `n` in bits.
    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    /// Largest representable key, `2^n - 1`.
    pub fn max_key(&self) -> ZKey {
        ZKey(low_bits(self.total_bits))
    }

    /// Exclusive upper bound of attribute `attr`'s domain.
    pub fn domain(&self, attr: usize) -> u128 {
        1u128 << self.betas[attr]
    }

    pub fn encode(&self, values: &[u64]) -> Result<ZKey> {
        if values.len() != self.attrs() {
            return Err(IceError::InvalidArgument(format!(
                "expected {} attribute values, got {}",
                self.attrs(),
                values.len()
            )));
        }
        for (attr, &v) in values.iter().enumerate() {
            if (v as u128) >= self.domain(attr) {
                return Err(IceError::Domain { attribute: attr, value: v, beta: self.betas[attr] });
            }
        }
        Ok(self.encode_unchecked(values))
    }

    /// Encodes without range checks; bits above an attribute's width are dropped.
    pub fn encode_unchecked(&self, values: &[u64]) -> ZKey {
        let mut key = 0u128;
        for (ps, &v) in self.positions.iter().zip(values) {
            let beta = ps.len();
            for (j, &p) in ps.iter().enumerate() {
                let bit = (v >> (beta - 1 - j)) & 1;
                key |= (bit as u128) << p;
            }
        }
        ZKey(key)
    }

    pub fn decode(&self, key: ZKey) -> Vec<u64> {
        (0..self.attrs()).map(|a| self.extract(key, a)).collect()
    }

    /// Value of a single attribute inside `key`.
    #[inline]
    pub fn extract(&self, key: ZKey, attr: usize) -> u64 {
        let mut v = 0u64;
        for &p in &self.positions[attr] {
            v = (v << 1) | ((key.0 >> p) & 1) as u64;
        }
        v
    }

    /// Z-positions owned by `attr`, as a bit mask.
    pub fn attr_mask(&self, attr: usize) -> u128 {
        self.attr_masks[attr]
    }

    /// True iff the decoded tuple satisfies every per-attribute bound of `qbox`.
    #[inline]
    pub fn in_box(&self, key: ZKey, qbox: &QueryBox) -> bool {
        (0..self.attrs()).all(|a| {
            let v = self.extract(key, a);
            qbox.low[a] <= v && v <= qbox.high[a]
        })
    }

    /// Checks that `qbox` fits this schema.
    pub fn validate_box(&self, qbox: &QueryBox) -> Result<()> {
        if qbox.low.len() != self.attrs() || qbox.high.len() != self.attrs() {
            return Err(IceError::InvalidArgument(format!(
                "query box has {} bounds, schema has {} attributes",
                qbox.low.len(),
                self.attrs()
            )));
        }
        for a in 0..self.attrs() {
            if qbox.high[a] as u128 >= self.domain(a) {
                return Err(IceError::Domain { attribute: a, value: qbox.high[a], beta: self.betas[a] });
            }
        }
        Ok(())
    }

    /// `(zLow, zUp)`: the keys of the box's lower and upper corners.
    pub fn box_corners(&self, qbox: &QueryBox) -> (ZKey, ZKey) {
        (self.encode_unchecked(&qbox.low), self.encode_unchecked(&qbox.high))
    }

    /// Smallest key strictly greater than `p` whose tuple lies in `qbox`.
    pub fn bigmin(&self, p: ZKey, qbox: &QueryBox) -> Option<ZKey> {
        if p >= self.max_key() {
            return None;
        }
        self.bigmin_from(ZKey(p.0 + 1), qbox)
    }

    /// Largest key strictly less than `p` whose tuple lies in `qbox`.
    pub fn litmax(&self, p: ZKey, qbox: &QueryBox) -> Option<ZKey> {
        if p.0 == 0 {
            return None;
        }
        self.litmax_to(ZKey(p.0 - 1), qbox)
    }

    /// Smallest in-box key `>= q`.
    pub fn bigmin_from(&self, q: ZKey, qbox: &QueryBox) -> Option<ZKey> {
        let (lo, hi) = self.box_corners(qbox);
        self.bigmin_with_corners(q, lo, hi)
    }

    /// Largest in-box key `<= q`.
    pub fn litmax_to(&self, q: ZKey, qbox: &QueryBox) -> Option<ZKey> {
        let (lo, hi) = self.box_corners(qbox);
        self.litmax_with_corners(q, lo, hi)
    }

    pub(crate) fn bigmin_with_corners(&self, q: ZKey, lo: ZKey, hi: ZKey) -> Option<ZKey> {
        let (q, mut min, mut max) = (q.0, lo.0, hi.0);
        let mut best = None;
        for pos in (0..self.total_bits).rev() {
            let bit = 1u128 << pos;
            let below = self.lower_same_attr[pos as usize];
            match (q & bit != 0, min & bit != 0, max & bit != 0) {
                (false, false, false) | (true, true, true) => {}
                (false, false, true) => {
                    best = Some(ZKey(load_ones_then_zeros(min, bit, below)));
                    max = load_zero_then_ones(max, bit, below);
                }
                (false, true, true) => return Some(ZKey(min)),
                (true, false, false) => return best,
                (true, false, true) => min = load_ones_then_zeros(min, bit, below),
                // min > max on this attribute: unreachable for a valid box
                (_, true, false) => return best,
            }
        }
        Some(ZKey(q))
    }

    pub(crate) fn litmax_with_corners(&self, q: ZKey, lo: ZKey, hi: ZKey) -> Option<ZKey> {
        let (q, mut min, mut max) = (q.0, lo.0, hi.0);
        let mut best = None;
        for pos in (0..self.total_bits).rev() {
            let bit = 1u128 << pos;
            let below = self.lower_same_attr[pos as usize];
            match (q & bit != 0, min & bit != 0, max & bit != 0) {
                (false, false, false) | (true, true, true) => {}
                (false, false, true) => max = load_zero_then_ones(max, bit, below),
                (false, true, true) => return best,
                (true, false, false) => return Some(ZKey(max)),
                (true, false, true) => {
                    best = Some(ZKey(load_zero_then_ones(max, bit, below)));
                    min = load_ones_then_zeros(min, bit, below);
                }
                (_, true, false) => return best,
            }
        }
        Some(ZKey(q))
    }
}

#[inline]
fn low_bits(n: u32) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

/// Sets `bit` and clears the same attribute's lower bits ("1000..").
#[inline]
fn load_ones_then_zeros(v: u128, bit: u128, below: u128) -> u128 {
    (v | bit) & !below
}

/// Clears `bit` and sets the same attribute's lower bits ("0111..").
#[inline]
fn load_zero_then_ones(v: u128, bit: u128, below: u128) -> u128 {
    (v & !bit) | below
}

/// Inclusive per-attribute range predicate in encoded attribute space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryBox {
    pub low: Vec<u64>,
    pub high: Vec<u64>,
}

impl QueryBox {
    pub fn new(low: Vec<u64>, high: Vec<u64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(IceError::InvalidArgument("low/high arity mismatch".into()));
        }
        if let Some(a) = (0..low.len()).find(|&a| low[a] > high[a]) {
            return Err(IceError::InvalidArgument(format!(
                "attribute {a}: low {} exceeds high {}",
                low[a], high[a]
            )));
        }
        Ok(QueryBox { low, high })
    }

    /// The box spanning the schema's entire domain.
    pub fn full(schema: &AttributeSchema) -> Self {
        QueryBox {
            low: vec![0; schema.attrs()],
            high: (0..schema.attrs()).map(|a| (schema.domain(a) - 1) as u64).collect(),
        }
    }

    /// Row-level predicate.
    #[inline]
    pub fn contains(&self, row: &[u64]) -> bool {
        row.iter().zip(self.low.iter().zip(&self.high)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

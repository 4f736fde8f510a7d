//! Recursive key-space filtering.
//!
//! A query box maps to the Z-interval `[zLow, zUp]`, which usually contains
//! long stretches of keys outside the box. The filter bisects the interval at
//! a separation point and, whenever that point falls outside the box, trims
//! both halves with LITMAX/BIGMIN. After `max_depth` levels the surviving
//! sub-intervals are a much tighter cover of the box's keys.

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::index::IceIndex;
use crate::zorder::{AttributeSchema, QueryBox, ZKey};

pub const DEFAULT_MAX_DEPTH: u32 = 6;

/// Inclusive key interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZInterval {
    pub low: ZKey,
    pub up: ZKey,
}

impl ZInterval {
    pub fn new(low: ZKey, up: ZKey) -> Result<Self> {
        if low > up {
            return Err(IceError::InvalidArgument(format!("interval [{low}, {up}] is inverted")));
        }
        Ok(ZInterval { low, up })
    }

    pub fn contains(&self, key: ZKey) -> bool {
        self.low <= key && key <= self.up
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Arithmetic midpoint of the interval.
    #[default]
    Midpoint,
    /// Best single-attribute split: maximize the skipped gap.
    OptimalOneSplit,
}

impl std::str::FromStr for SplitStrategy {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "midpoint" | "middle" | "mid" => Ok(SplitStrategy::Midpoint),
            "optimal-1-split" | "opt1" | "optimal_one_split" | "optimal" => Ok(SplitStrategy::OptimalOneSplit),
            _ => Err(IceError::InvalidArgument(format!("unknown split strategy `{s}`"))),
        }
    }
}

impl std::fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitStrategy::Midpoint => "midpoint",
            SplitStrategy::OptimalOneSplit => "opt1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub max_depth: u32,
    pub strategy: SplitStrategy,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { max_depth: DEFAULT_MAX_DEPTH, strategy: SplitStrategy::Midpoint }
    }
}

impl FilterConfig {
    pub fn with_depth(max_depth: u32) -> Self {
        FilterConfig { max_depth, ..Default::default() }
    }
}

/// Picks the point at which `q` is split. Requires `q.low < q.up`; the
/// returned point always lies in `[q.low, q.up)`.
pub fn find_separation_point(
    schema: &AttributeSchema,
    q: ZInterval,
    qbox: &QueryBox,
    strategy: SplitStrategy,
) -> Result<ZKey> {
    if q.low >= q.up {
        return Err(IceError::Precondition(format!("cannot split degenerate interval [{}, {}]", q.low, q.up)));
    }
    let mid = midpoint(q);
    Ok(match strategy {
        SplitStrategy::Midpoint => mid,
        SplitStrategy::OptimalOneSplit => optimal_one_split(schema, q, qbox, mid),
    })
}

#[inline]
fn midpoint(q: ZInterval) -> ZKey {
    // overflow-free floor((a + b) / 2)
    ZKey((q.low.0 & q.up.0) + ((q.low.0 ^ q.up.0) >> 1))
}

/// Number of keys of `q` skipped when splitting at `p`: the run between the
/// largest in-box key below `p` and the smallest in-box key above it.
pub fn skipped_gap(schema: &AttributeSchema, q: ZInterval, qbox: &QueryBox, p: ZKey) -> u128 {
    if schema.in_box(p, qbox) {
        return 0;
    }
    let start = match schema.litmax(p, qbox) {
        Some(l) if l >= q.low => l.0 + 1,
        _ => q.low.0,
    };
    let end = match schema.bigmin(p, qbox) {
        Some(b) if b <= q.up => b.0,
        _ => q.up.0.saturating_add(1),
    };
    end - start
}

/// Candidates: the interval midpoint with one attribute at a time moved to the
/// middle of its box range. Ties keep the smaller key.
fn optimal_one_split(schema: &AttributeSchema, q: ZInterval, qbox: &QueryBox, mid: ZKey) -> ZKey {
    let base = schema.decode(mid);
    let mut best: Option<(u128, ZKey)> = None;
    for attr in 0..schema.attrs() {
        let mut v = base.clone();
        v[attr] = qbox.low[attr] + (qbox.high[attr] - qbox.low[attr]) / 2;
        let cand = schema.encode_unchecked(&v);
        if cand < q.low || cand >= q.up {
            continue;
        }
        let gap = skipped_gap(schema, q, qbox, cand);
        best = match best {
            Some((g, k)) if g > gap || (g == gap && k <= cand) => Some((g, k)),
            _ => Some((gap, cand)),
        };
    }
    best.map_or(mid, |(_, k)| k)
}

/// Splits the box's Z-interval into at most `2^max_depth` ordered, disjoint
/// sub-intervals that together contain every key inside the box.
pub fn recursive_filter(schema: &AttributeSchema, qbox: &QueryBox, config: FilterConfig) -> Vec<ZInterval> {
    let (lo, hi) = schema.box_corners(qbox);
    let mut out = Vec::new();
    filter_rec(schema, qbox, ZInterval { low: lo, up: hi }, 0, config, &mut out);
    out
}

fn filter_rec(
    schema: &AttributeSchema,
    qbox: &QueryBox,
    q: ZInterval,
    depth: u32,
    config: FilterConfig,
    out: &mut Vec<ZInterval>,
) {
    if depth >= config.max_depth || q.low == q.up {
        out.push(q);
        return;
    }
    let p = find_separation_point(schema, q, qbox, config.strategy).expect("interval is non-degenerate");
    if schema.in_box(p, qbox) {
        // p goes to the left half only, keeping the halves disjoint
        filter_rec(schema, qbox, ZInterval { low: q.low, up: p }, depth + 1, config, out);
        filter_rec(schema, qbox, ZInterval { low: ZKey(p.0 + 1), up: q.up }, depth + 1, config, out);
    } else {
        if let Some(l) = schema.litmax(p, qbox).filter(|l| *l >= q.low) {
            filter_rec(schema, qbox, ZInterval { low: q.low, up: l }, depth + 1, config, out);
        }
        if let Some(b) = schema.bigmin(p, qbox).filter(|b| *b <= q.up) {
            filter_rec(schema, qbox, ZInterval { low: b, up: q.up }, depth + 1, config, out);
        }
    }
}

/// Rank-space length of `intervals` on `index`: the sampling universe size.
pub fn rank_length(index: &IceIndex, intervals: &[ZInterval]) -> u64 {
    intervals.iter().map(|iv| index.key2rank(iv.up) - index.key2rank_exclusive(iv.low)).sum()
}

/// `η = card(box) / rSum`, or `None` when the box is empty.
pub fn filter_efficiency(index: &IceIndex, qbox: &QueryBox, intervals: &[ZInterval]) -> Option<f64> {
    let card = index.range_query_exact(qbox).cardinality;
    if card == 0 {
        return None;
    }
    let r_sum = rank_length(index, intervals);
    assert!(r_sum >= card, "filtered intervals lost in-box tuples ({r_sum} < {card})");
    Some(card as f64 / r_sum as f64)
}

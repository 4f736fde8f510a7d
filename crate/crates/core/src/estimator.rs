//! Rank-space sampling estimator with Q-error bounding.
//!
//! Pipeline for one query box:
//!
//! 1. filter the box's Z-interval into tight sub-intervals,
//! 2. project each sub-interval to a half-open global-rank interval,
//! 3. draw `b` ranks uniformly with replacement from their union,
//! 4. decode each rank back to a key and test box membership,
//! 5. scale the hit count: `est = count / b * rSum`,
//! 6. compute the probability `P` that `est` underestimates by the factor
//!    `q_b`, and if `P > 1 - c` replace `est` by an exact index scan.
//!
//! With the fallback disabled the estimate is unbiased and its variance is
//! `card^2 / b * (1/η - 1)` where `η = card / rSum`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{IceError, Result};
use crate::filter::{recursive_filter, FilterConfig, ZInterval};
use crate::index::IceIndex;
use crate::zorder::QueryBox;

pub const DEFAULT_BUDGET: u64 = 20_000;
pub const DEFAULT_Q_BOUND: f64 = 20.0;
pub const DEFAULT_CONFIDENCE: f64 = 1.0 - 1e-7;
/// Above this many trials the binomial pmf may be replaced by a normal density.
pub const GAUSSIAN_THRESHOLD: f64 = 20.0;

/// Half-open interval of 0-based exclusive ranks; covers global ranks
/// `start + 1 ..= end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankInterval {
    pub start: u64,
    pub end: u64,
}

impl RankInterval {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RankIntervalSet {
    intervals: Vec<RankInterval>,
    /// Running totals of interval lengths.
    cumulative: Vec<u64>,
}

impl RankIntervalSet {
    pub fn intervals(&self) -> &[RankInterval] {
        &self.intervals
    }

    pub fn r_sum(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Maps a position in the concatenated rank space `[0, rSum)` to its
    /// 1-indexed global rank.
    #[inline]
    pub fn global_rank(&self, offset: u64) -> u64 {
        let i = self.cumulative.partition_point(|&c| c <= offset);
        let before = if i == 0 { 0 } else { self.cumulative[i - 1] };
        self.intervals[i].start + (offset - before) + 1
    }

    /// `b` independent uniform draws, with replacement, as global ranks.
    pub fn sample<R: Rng + ?Sized>(&self, b: u64, rng: &mut R) -> Result<Vec<u64>> {
        let r_sum = self.r_sum();
        if r_sum == 0 {
            return Err(IceError::Precondition("cannot sample from an empty rank space".into()));
        }
        Ok((0..b).map(|_| self.global_rank(rng.random_range(0..r_sum))).collect())
    }
}

/// `[key2rankExclusive(low), key2rank(up))` per interval, empty ones dropped.
pub fn project_to_ranks(intervals: &[ZInterval], index: &IceIndex) -> RankIntervalSet {
    let mut set = RankIntervalSet::default();
    let mut total = 0;
    for iv in intervals {
        let r = RankInterval { start: index.key2rank_exclusive(iv.low), end: index.key2rank(iv.up) };
        if !r.is_empty() {
            total += r.len();
            set.intervals.push(r);
            set.cumulative.push(total);
        }
    }
    set
}

/// Probability that the true cardinality is `q_b * est` given `count` hits out
/// of `b` draws over a rank space of `rSum`: the binomial pmf
/// `C(n, count) (1-p)^(n-count) p^count` with `n = ceil(est * q_b)` and
/// `p = b / rSum`, evaluated in log space.
///
/// No hits gives `1`, forcing the exact fallback. `p >= 1` is treated as a
/// certain draw.
pub fn overflow_probability(est: f64, q_bound: f64, count: u64, b: u64, r_sum: u64) -> f64 {
    overflow_probability_impl(est, q_bound, count, b, r_sum, false)
}

/// As [`overflow_probability`], but once `est * q_b` exceeds
/// [`GAUSSIAN_THRESHOLD`] the pmf is replaced by the normal density with
/// `μ = est q_b p` and `σ² = est q_b p (1 - p)` evaluated at `count`.
pub fn overflow_probability_gaussian(est: f64, q_bound: f64, count: u64, b: u64, r_sum: u64) -> f64 {
    overflow_probability_impl(est, q_bound, count, b, r_sum, true)
}

fn overflow_probability_impl(est: f64, q_bound: f64, count: u64, b: u64, r_sum: u64, gaussian: bool) -> f64 {
    if count == 0 || r_sum == 0 {
        return 1.0;
    }
    let trials_real = est * q_bound;
    let trials = trials_real.ceil() as u64;
    let p = b as f64 / r_sum as f64;
    if p >= 1.0 {
        return if trials == count { 1.0 } else { 0.0 };
    }
    if trials < count {
        return 0.0;
    }
    if gaussian && trials_real > GAUSSIAN_THRESHOLD {
        let mean = trials_real * p;
        let var = trials_real * p * (1.0 - p);
        let z = count as f64 - mean;
        let density = (-z * z / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        return density.clamp(0.0, 1.0);
    }
    let ln_p = ln_binomial(trials, count) + (trials - count) as f64 * (-p).ln_1p() + count as f64 * p.ln();
    ln_p.exp().clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Sample budget `b`.
    pub budget: u64,
    /// Largest tolerated Q-error `q_b`.
    pub q_bound: f64,
    /// Confidence `c`; fall back to an exact scan when `P > 1 - c`.
    pub confidence: f64,
    pub hybrid: bool,
    /// Use the normal approximation above [`GAUSSIAN_THRESHOLD`] trials.
    pub gaussian_approx: bool,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            budget: DEFAULT_BUDGET,
            q_bound: DEFAULT_Q_BOUND,
            confidence: DEFAULT_CONFIDENCE,
            hybrid: true,
            gaussian_approx: false,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(IceError::InvalidArgument("budget must be at least 1".into()));
        }
        if self.q_bound.is_nan() || self.q_bound <= 1.0 {
            return Err(IceError::InvalidArgument(format!("q-error bound must exceed 1, got {}", self.q_bound)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(IceError::InvalidArgument(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub est: f64,
    pub count: u64,
    pub budget: u64,
    pub r_sum: u64,
    pub overflow_prob: f64,
    pub used_exact_scan: bool,
    /// Number of filtered key intervals that survived rank projection.
    pub intervals: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl EstimateResult {
    /// The same result with timing cleared, for determinism comparisons.
    pub fn without_timing(mut self) -> Self {
        self.elapsed = Duration::ZERO;
        self
    }
}

/// Estimates `card(qbox)` with a generator seeded from `est_config.seed`.
pub fn estimate(
    index: &IceIndex,
    qbox: &QueryBox,
    filter_config: FilterConfig,
    est_config: &EstimatorConfig,
) -> Result<EstimateResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(est_config.seed);
    estimate_with_rng(index, qbox, filter_config, est_config, &mut rng)
}

pub fn estimate_with_rng<R: Rng + ?Sized>(
    index: &IceIndex,
    qbox: &QueryBox,
    filter_config: FilterConfig,
    est_config: &EstimatorConfig,
    rng: &mut R,
) -> Result<EstimateResult> {
    est_config.validate()?;
    let schema = index.schema();
    schema.validate_box(qbox)?;
    let started = Instant::now();

    let intervals = recursive_filter(schema, qbox, filter_config);
    let ranks = project_to_ranks(&intervals, index);
    let r_sum = ranks.r_sum();
    let b = est_config.budget;
    if r_sum == 0 {
        return Ok(EstimateResult {
            est: 0.0,
            count: 0,
            budget: b,
            r_sum: 0,
            overflow_prob: 0.0,
            used_exact_scan: false,
            intervals: 0,
            elapsed: started.elapsed(),
        });
    }

    let mut count = 0u64;
    for _ in 0..b {
        let rank = ranks.global_rank(rng.random_range(0..r_sum));
        let key = index.rank2key_unchecked(rank);
        if schema.in_box(key, qbox) {
            count += 1;
        }
    }
    let mut est = count as f64 / b as f64 * r_sum as f64;
    let overflow_prob = overflow_probability_impl(est, est_config.q_bound, count, b, r_sum, est_config.gaussian_approx);
    let mut used_exact_scan = false;
    if est_config.hybrid && overflow_prob > 1.0 - est_config.confidence {
        est = index.range_query_exact(qbox).cardinality as f64;
        used_exact_scan = true;
    }
    Ok(EstimateResult {
        est,
        count,
        budget: b,
        r_sum,
        overflow_prob,
        used_exact_scan,
        intervals: ranks.intervals().len(),
        elapsed: started.elapsed(),
    })
}

/// Theoretical variance of the sampling estimate: `card^2 / b * (1/η - 1)`.
pub fn theoretical_variance(card: u64, r_sum: u64, b: u64) -> f64 {
    if card == 0 {
        return 0.0;
    }
    let eta = card as f64 / r_sum as f64;
    (card as f64).powi(2) / b as f64 * (1.0 / eta - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::SplitStrategy;
    use crate::zorder::{AttributeSchema, ZKey};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small_index() -> IceIndex {
        let s = AttributeSchema::uniform(2, 8).unwrap();
        IceIndex::bulk_load(s, [5u128, 5, 9, 12, 12, 12].map(ZKey), 4).unwrap()
    }

    fn iv(a: u128, b: u128) -> ZInterval {
        ZInterval { low: ZKey(a), up: ZKey(b) }
    }

    #[test]
    fn projection_examples() {
        let idx = small_index();
        let r = project_to_ranks(&[iv(5, 9)], &idx);
        assert_eq!(r.intervals(), &[RankInterval { start: 0, end: 3 }]);
        assert_eq!(r.r_sum(), 3);
        assert_eq!(project_to_ranks(&[iv(6, 8)], &idx).intervals(), &[]);
        let r = project_to_ranks(&[iv(3, 6), iv(9, 12)], &idx);
        assert_eq!(r.intervals(), &[RankInterval { start: 0, end: 2 }, RankInterval { start: 2, end: 6 }]);
        assert_eq!(r.r_sum(), 6);
    }

    #[test]
    fn sampling_single_rank() {
        let idx = small_index();
        let r = project_to_ranks(&[iv(9, 9)], &idx);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(r.sample(100, &mut rng).unwrap().iter().all(|&x| x == 3));
        let empty = project_to_ranks(&[iv(6, 8)], &idx);
        assert!(empty.sample(10, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_uniform() {
        let idx = small_index();
        let r = project_to_ranks(&[iv(3, 6), iv(9, 12)], &idx);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = r.sample(60_000, &mut rng).unwrap();
        let mut hist = [0f64; 6];
        for d in draws {
            hist[(d - 1) as usize] += 1.0;
        }
        let expected = 10_000.0;
        let chi2: f64 = hist.iter().map(|o| (o - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(5.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn sampling_deterministic() {
        let idx = small_index();
        let r = project_to_ranks(&[iv(3, 6), iv(9, 12)], &idx);
        let a = r.sample(500, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = r.sample(500, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overflow_examples() {
        assert_eq!(overflow_probability(0.0, 20.0, 0, 100, 1000), 1.0);
        // direct evaluation of C(40,2) 0.9^38 0.1^2
        let direct = 780.0 * 0.9f64.powi(38) * 0.01;
        let p = overflow_probability(20.0, 2.0, 2, 100, 1000);
        assert!((p - direct).abs() < 1e-12, "{p} vs {direct}");
        assert!((p - 0.142).abs() < 1e-3);
        assert_eq!(overflow_probability(50.0, 3.0, 50, 50, 50), 0.0);
    }

    #[test]
    fn gaussian_only_above_threshold() {
        // est * q_b = 10: below the threshold both routes agree
        let a = overflow_probability(5.0, 2.0, 3, 100, 1000);
        let b = overflow_probability_gaussian(5.0, 2.0, 3, 100, 1000);
        assert_eq!(a, b);
        let exact = overflow_probability(190.0, 2.0, 38, 100, 1000);
        let approx = overflow_probability_gaussian(190.0, 2.0, 38, 100, 1000);
        assert_ne!(exact, approx);
        assert!((exact - approx).abs() < 0.05 * exact, "{exact} vs {approx}");
    }

    #[test]
    fn whole_domain_estimate_is_exact() {
        let s = AttributeSchema::uniform(2, 6).unwrap();
        let keys = (0..64u64).flat_map(|x| (0..64u64).map(move |y| (x, y))).map(|(x, y)| s.encode(&[x, y]).unwrap());
        let idx = IceIndex::bulk_load(s.clone(), keys, 10).unwrap();
        let cfg = EstimatorConfig { budget: 1000, ..Default::default() };
        let r = estimate(&idx, &QueryBox::full(&s), FilterConfig::default(), &cfg).unwrap();
        assert_eq!(r.r_sum, 4096);
        assert_eq!(r.count, 1000);
        assert_eq!(r.est, 4096.0);
        assert!(!r.used_exact_scan);
    }

    #[test]
    fn empty_box_short_circuits() {
        let s = AttributeSchema::uniform(2, 6).unwrap();
        let keys = (0..64u64).map(|v| s.encode(&[v, v]).unwrap());
        let idx = IceIndex::bulk_load(s.clone(), keys, 10).unwrap();
        let qb = QueryBox::new(vec![0, 40], vec![10, 50]).unwrap();
        let r = estimate(&idx, &qb, FilterConfig::with_depth(12), &EstimatorConfig::default()).unwrap();
        assert_eq!(r.est, 0.0);
        assert_eq!(r.r_sum, 0);
        assert!(!r.used_exact_scan);
    }

    #[test]
    fn hybrid_fallback_is_exact_and_deterministic() {
        let s = AttributeSchema::uniform(2, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let keys: Vec<ZKey> =
            (0..20_000).map(|_| s.encode(&[rng.random_range(0..1024), rng.random_range(0..1024)]).unwrap()).collect();
        let idx = IceIndex::bulk_load(s.clone(), keys, 32).unwrap();
        let qb = QueryBox::new(vec![10, 10], vec![14, 900]).unwrap();
        let truth = idx.range_query_exact(&qb).cardinality as f64;
        let cfg = EstimatorConfig { budget: 50, seed: 3, ..Default::default() };
        let fcfg = FilterConfig { max_depth: 2, strategy: SplitStrategy::Midpoint };
        let r = estimate(&idx, &qb, fcfg, &cfg).unwrap();
        if r.used_exact_scan {
            assert_eq!(r.est, truth);
        } else {
            assert_eq!(r.est, r.count as f64 / 50.0 * r.r_sum as f64);
        }
        let again = estimate(&idx, &qb, fcfg, &cfg).unwrap();
        assert_eq!(r.without_timing(), again.without_timing());

        let off = EstimatorConfig { hybrid: false, ..cfg };
        let r = estimate(&idx, &qb, fcfg, &off).unwrap();
        assert!(!r.used_exact_scan);
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig { budget: 0, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig { q_bound: 1.0, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig { confidence: 1.0, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig::default().validate().is_ok());
    }
}

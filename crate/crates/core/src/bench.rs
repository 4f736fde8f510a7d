//! Workload replay, Q-error reports and parameter sweeps.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::Reservoir;
use crate::error::{IceError, Result};
use crate::estimator::{estimate, EstimatorConfig};
use crate::filter::{FilterConfig, SplitStrategy};
use crate::index::{IceIndex, DEFAULT_FANOUT};
use crate::workload::stream::{Multiset, Workload, WorkloadOp};
use crate::workload::table::Table;
use crate::zorder::{QueryBox, ZKey};

/// `max(E/T, T/E)` for positive inputs.
pub fn qerror(est: f64, truth: f64) -> Result<f64> {
    if !(est > 0.0 && truth > 0.0) {
        return Err(IceError::InvalidArgument(format!("q-error needs positive inputs, got ({est}, {truth})")));
    }
    Ok((est / truth).max(truth / est))
}

/// Q-error that reports `max(E, T) + 1` when either side is zero.
pub fn qerror_with_convention(est: f64, truth: f64) -> f64 {
    qerror(est, truth).unwrap_or_else(|_| est.max(truth) + 1.0)
}

/// Nearest-rank quantile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IceParams {
    pub fanout: usize,
    pub filter: FilterConfig,
    pub estimator: EstimatorConfig,
}

impl Default for IceParams {
    fn default() -> Self {
        IceParams { fanout: DEFAULT_FANOUT, filter: FilterConfig::default(), estimator: EstimatorConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Ice(IceParams),
    /// Reservoir sample; `capacity = None` uses one row per thousand.
    Sample {
        capacity: Option<usize>,
        seed: u64,
    },
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ice(_) => "ice",
            Method::Sample { .. } => "sample",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Ignore updates, replaying against the model built from the initial table.
    pub freeze: bool,
    /// Evaluate queries between consecutive updates concurrently. Latency
    /// figures are then not meaningful.
    pub parallel: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySample {
    pub est: f64,
    pub true_card: u64,
    pub qerror: f64,
    pub used_exact_scan: bool,
    #[serde(skip)]
    pub latency: Duration,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QErrorSummary {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    /// Over every query, including those with zero true cardinality.
    pub max: f64,
}

impl QErrorSummary {
    pub fn from_samples(samples: &[QuerySample]) -> Self {
        let mut positive: Vec<f64> = samples.iter().filter(|s| s.true_card > 0).map(|s| s.qerror).collect();
        positive.sort_by(f64::total_cmp);
        QErrorSummary {
            p50: nearest_rank(&positive, 0.50),
            p95: nearest_rank(&positive, 0.95),
            p99: nearest_rank(&positive, 0.99),
            max: samples.iter().map(|s| s.qerror).fold(f64::NAN, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: Method,
    pub frozen: bool,
    pub queries: usize,
    pub zero_card_queries: usize,
    pub qerror: QErrorSummary,
    pub mean_estimate_us: f64,
    pub p99_estimate_us: f64,
    /// Modify counts as two tuples.
    pub mean_update_us_per_tuple: f64,
    pub update_tuples: u64,
    pub build_ms: f64,
    pub model_bytes: usize,
    /// Queries answered by the exact-scan fallback.
    pub fallbacks: usize,
    /// Update tuples per query.
    pub batch_size: f64,
    #[serde(skip)]
    pub samples: Vec<QuerySample>,
}

impl BenchReport {
    /// The report with every timing field zeroed.
    pub fn without_timing(mut self) -> Self {
        self.mean_estimate_us = 0.0;
        self.p99_estimate_us = 0.0;
        self.mean_update_us_per_tuple = 0.0;
        self.build_ms = 0.0;
        for s in &mut self.samples {
            s.latency = Duration::ZERO;
        }
        self
    }

    pub fn to_csv_row(&self) -> CsvRow {
        let (budget, dmax, strategy, qbound, confidence, hybrid, fanout, capacity) = match &self.method {
            Method::Ice(p) => (
                Some(p.estimator.budget),
                Some(p.filter.max_depth),
                Some(p.filter.strategy.to_string()),
                Some(p.estimator.q_bound),
                Some(p.estimator.confidence),
                Some(p.estimator.hybrid),
                Some(p.fanout),
                None,
            ),
            Method::Sample { capacity, .. } => (None, None, None, None, None, None, None, *capacity),
            Method::Oracle => (None, None, None, None, None, None, None, None),
        };
        CsvRow {
            method: self.method.name().to_string(),
            frozen: self.frozen,
            budget,
            dmax,
            strategy,
            qbound,
            confidence,
            hybrid,
            fanout,
            capacity,
            queries: self.queries,
            zero_card_queries: self.zero_card_queries,
            p50: self.qerror.p50,
            p95: self.qerror.p95,
            p99: self.qerror.p99,
            max: self.qerror.max,
            mean_estimate_us: self.mean_estimate_us,
            p99_estimate_us: self.p99_estimate_us,
            mean_update_us_per_tuple: self.mean_update_us_per_tuple,
            update_tuples: self.update_tuples,
            build_ms: self.build_ms,
            model_bytes: self.model_bytes,
            fallbacks: self.fallbacks,
            batch_size: self.batch_size,
        }
    }
}

/// One flat CSV record per report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub frozen: bool,
    pub budget: Option<u64>,
    pub dmax: Option<u32>,
    pub strategy: Option<String>,
    pub qbound: Option<f64>,
    pub confidence: Option<f64>,
    pub hybrid: Option<bool>,
    pub fanout: Option<usize>,
    pub capacity: Option<usize>,
    pub queries: usize,
    pub zero_card_queries: usize,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub mean_estimate_us: f64,
    pub p99_estimate_us: f64,
    pub mean_update_us_per_tuple: f64,
    pub update_tuples: u64,
    pub build_ms: f64,
    pub model_bytes: usize,
    pub fallbacks: usize,
    pub batch_size: f64,
}

pub fn write_csv<W: Write>(reports: &[BenchReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r.to_csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Per-query seed derived from the base seed and the query position.
pub fn query_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Model {
    Ice(IceIndex, IceParams),
    Sample(Reservoir),
    Oracle(Multiset),
}

struct Answer {
    est: f64,
    used_exact_scan: bool,
}

impl Model {
    fn build(table: &Table, method: &Method) -> Result<Self> {
        Ok(match method {
            Method::Ice(p) => Model::Ice(IceIndex::bulk_load(table.schema.clone(), table.keys(), p.fanout)?, *p),
            Method::Sample { capacity: Some(c), seed } => Model::Sample(Reservoir::with_capacity(table, *c, *seed)),
            Method::Sample { capacity: None, seed } => Model::Sample(Reservoir::build(table, *seed)),
            Method::Oracle => Model::Oracle(Multiset::from_rows(&table.rows)),
        })
    }

    fn model_bytes(&self) -> usize {
        match self {
            Model::Ice(idx, _) => idx.to_snapshot_bytes().len(),
            Model::Sample(r) => r.model_bytes(),
            Model::Oracle(m) => m.len() as usize * std::mem::size_of::<u64>(),
        }
    }

    fn key(idx: &IceIndex, row: &[u64]) -> Result<ZKey> {
        idx.schema().encode(row)
    }

    /// Applies an update, returning the number of tuples touched.
    fn apply(&mut self, op: &WorkloadOp) -> Result<u64> {
        match self {
            Model::Ice(idx, _) => match op {
                WorkloadOp::Insert { values } => {
                    let k = Self::key(idx, values)?;
                    idx.insert(k)?;
                }
                WorkloadOp::Delete { values } => {
                    let k = Self::key(idx, values)?;
                    idx.delete(k)?;
                }
                WorkloadOp::Modify { old, new } => {
                    let (o, n) = (Self::key(idx, old)?, Self::key(idx, new)?);
                    idx.modify(o, n)?;
                }
                WorkloadOp::Query { .. } => {}
            },
            Model::Sample(r) => r.apply(op),
            Model::Oracle(m) => m.apply(op)?,
        }
        Ok(match op {
            WorkloadOp::Modify { .. } => 2,
            WorkloadOp::Query { .. } => 0,
            _ => 1,
        })
    }

    fn answer(&self, qbox: &QueryBox, query_index: u64) -> Result<Answer> {
        match self {
            Model::Ice(idx, p) => {
                let cfg = EstimatorConfig { seed: query_seed(p.estimator.seed, query_index), ..p.estimator };
                let r = estimate(idx, qbox, p.filter, &cfg)?;
                Ok(Answer { est: r.est, used_exact_scan: r.used_exact_scan })
            }
            Model::Sample(r) => Ok(Answer { est: r.estimate(qbox).est, used_exact_scan: false }),
            Model::Oracle(m) => Ok(Answer { est: m.cardinality(qbox) as f64, used_exact_scan: false }),
        }
    }
}

fn timed_answer(model: &Model, qbox: &QueryBox, true_card: u64, query_index: u64) -> Result<QuerySample> {
    let started = Instant::now();
    let a = model.answer(qbox, query_index)?;
    let latency = started.elapsed();
    Ok(QuerySample {
        est: a.est,
        true_card,
        qerror: qerror_with_convention(a.est, true_card as f64),
        used_exact_scan: a.used_exact_scan,
        latency,
    })
}

/// Replays `workload` against a model of `method` built from `table`.
pub fn run_benchmark(table: &Table, workload: &Workload, method: &Method, opts: BenchOptions) -> Result<BenchReport> {
    workload.check_table(table)?;
    if let Method::Ice(p) = method {
        p.estimator.validate()?;
    }

    let started = Instant::now();
    let mut model = Model::build(table, method)?;
    let build = started.elapsed();

    let mut samples: Vec<QuerySample> = Vec::new();
    let mut update_time = Duration::ZERO;
    let mut update_tuples = 0u64;
    let mut pending: Vec<(&QueryBox, u64, u64)> = Vec::new();
    let mut query_index = 0u64;

    let flush = |model: &Model, pending: &mut Vec<(&QueryBox, u64, u64)>, samples: &mut Vec<QuerySample>| -> Result<()> {
        let answered: Result<Vec<QuerySample>> =
            pending.par_iter().map(|&(q, c, i)| timed_answer(model, q, c, i)).collect();
        samples.extend(answered?);
        pending.clear();
        Ok(())
    };

    for op in &workload.ops {
        match op {
            WorkloadOp::Query { qbox, true_card } => {
                if opts.parallel {
                    pending.push((qbox, *true_card, query_index));
                } else {
                    samples.push(timed_answer(&model, qbox, *true_card, query_index)?);
                }
                query_index += 1;
            }
            _ if opts.freeze => {}
            _ => {
                flush(&model, &mut pending, &mut samples)?;
                let t = Instant::now();
                let tuples = model.apply(op)?;
                update_time += t.elapsed();
                update_tuples += tuples;
            }
        }
    }
    flush(&model, &mut pending, &mut samples)?;

    let mut lat_us: Vec<f64> = samples.iter().map(|s| s.latency.as_secs_f64() * 1e6).collect();
    lat_us.sort_by(f64::total_cmp);
    let queries = samples.len();
    let updates_in_stream: u64 = workload
        .ops
        .iter()
        .map(|op| match op {
            WorkloadOp::Modify { .. } => 2,
            WorkloadOp::Query { .. } => 0,
            _ => 1,
        })
        .sum();
    Ok(BenchReport {
        method: method.clone(),
        frozen: opts.freeze,
        queries,
        zero_card_queries: samples.iter().filter(|s| s.true_card == 0).count(),
        qerror: QErrorSummary::from_samples(&samples),
        mean_estimate_us: if queries == 0 { 0.0 } else { lat_us.iter().sum::<f64>() / queries as f64 },
        p99_estimate_us: nearest_rank(&lat_us, 0.99),
        mean_update_us_per_tuple: if update_tuples == 0 {
            0.0
        } else {
            update_time.as_secs_f64() * 1e6 / update_tuples as f64
        },
        update_tuples,
        build_ms: build.as_secs_f64() * 1e3,
        model_bytes: model.model_bytes(),
        fallbacks: samples.iter().filter(|s| s.used_exact_scan).count(),
        batch_size: if queries == 0 { 0.0 } else { updates_in_stream as f64 / queries as f64 },
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Budget,
    Dmax,
    Strategy,
    Qbound,
    Confidence,
}

impl std::str::FromStr for SweepParam {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "budget" | "b" => Ok(SweepParam::Budget),
            "dmax" | "depth" => Ok(SweepParam::Dmax),
            "strategy" => Ok(SweepParam::Strategy),
            "qbound" | "qb" => Ok(SweepParam::Qbound),
            "confidence" | "c" => Ok(SweepParam::Confidence),
            _ => Err(IceError::InvalidArgument(format!(
                "unknown sweep parameter `{s}`; expected budget, dmax, strategy, qbound or confidence"
            ))),
        }
    }
}

impl SweepParam {
    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: IceParams, value: &str) -> Result<IceParams> {
        let bad = |e: &dyn std::fmt::Display| IceError::InvalidArgument(format!("bad {self:?} value `{value}`: {e}"));
        let mut p = base;
        match self {
            SweepParam::Budget => p.estimator.budget = value.parse().map_err(|e| bad(&e))?,
            SweepParam::Dmax => p.filter.max_depth = value.parse().map_err(|e| bad(&e))?,
            SweepParam::Strategy => p.filter.strategy = value.parse::<SplitStrategy>()?,
            SweepParam::Qbound => p.estimator.q_bound = value.parse().map_err(|e| bad(&e))?,
            SweepParam::Confidence => p.estimator.confidence = value.parse().map_err(|e| bad(&e))?,
        }
        p.estimator.validate()?;
        Ok(p)
    }
}

/// One replay per value, with seeds held fixed.
pub fn sweep(
    table: &Table,
    workload: &Workload,
    base: IceParams,
    param: SweepParam,
    values: &[String],
    opts: BenchOptions,
) -> Result<Vec<BenchReport>> {
    let params: Vec<IceParams> = values.iter().map(|v| param.apply(base, v)).collect::<Result<_>>()?;
    params.into_iter().map(|p| run_benchmark(table, workload, &Method::Ice(p), opts)).collect()
}

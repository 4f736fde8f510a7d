//! Dynamic workloads: update mixes, adversarial update selection and the
//! interleaved stream file.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::workload::queries::{generate_queries, LabeledQuery, QueryMode};
use crate::workload::table::{Row, Table};
use crate::zorder::QueryBox;

/// Per-box weight cap for adversarial inserts.
pub const WEIGHT_CAP: f64 = 1e5;
/// Fraction of queries whose boxes attract adversarial inserts.
pub const ADVERSARIAL_QUERY_SHARE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    #[default]
    Static,
    InsertHeavy,
    UpdateHeavy,
}

impl WorkloadKind {
    /// `(insert, delete, modify)` ratio.
    pub fn ratios(self) -> (u64, u64, u64) {
        match self {
            WorkloadKind::Static => (0, 0, 0),
            WorkloadKind::InsertHeavy => (2, 1, 1),
            WorkloadKind::UpdateHeavy => (1, 1, 2),
        }
    }
}

impl std::str::FromStr for WorkloadKind {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(WorkloadKind::Static),
            "insert-heavy" => Ok(WorkloadKind::InsertHeavy),
            "update-heavy" => Ok(WorkloadKind::UpdateHeavy),
            _ => Err(IceError::InvalidArgument(format!("unknown workload kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub query_count: usize,
    /// Update operations as a fraction of the table size.
    pub update_fraction: f64,
    pub seed: u64,
    pub query_mode: QueryMode,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec { kind: WorkloadKind::Static, query_count: 2048, update_fraction: 0.2, seed: 0, query_mode: QueryMode::Default }
    }
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, seed: u64) -> Self {
        WorkloadSpec { kind, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != WorkloadKind::Static && !(self.update_fraction > 0.0 && self.update_fraction < 1.0) {
            return Err(IceError::InvalidArgument(format!(
                "update fraction must lie in (0, 1), got {}",
                self.update_fraction
            )));
        }
        if self.query_count == 0 {
            return Err(IceError::InvalidArgument("query count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpCounts {
    pub inserts: usize,
    pub deletes: usize,
    pub modifies: usize,
}

impl OpCounts {
    pub fn total(&self) -> usize {
        self.inserts + self.deletes + self.modifies
    }
}

/// Delete and modify shares are rounded; inserts take the remainder.
pub fn op_counts(spec: &WorkloadSpec, table_size: usize) -> OpCounts {
    let (i, d, m) = spec.kind.ratios();
    let sum = i + d + m;
    if sum == 0 {
        return OpCounts { inserts: 0, deletes: 0, modifies: 0 };
    }
    let total = (spec.update_fraction * table_size as f64).round() as usize;
    let deletes = (total as f64 * d as f64 / sum as f64).round() as usize;
    let modifies = (total as f64 * m as f64 / sum as f64).round() as usize;
    OpCounts { inserts: total - deletes - modifies, deletes, modifies }
}

/// Weight of `row`: sum over covering boxes of `min(1/sel, WEIGHT_CAP)`.
pub fn adversarial_weight(row: &[u64], boxes: &[(QueryBox, f64)]) -> f64 {
    boxes
        .iter()
        .filter(|(b, _)| b.contains(row))
        .map(|&(_, sel)| if sel > 0.0 { (1.0 / sel).min(WEIGHT_CAP) } else { WEIGHT_CAP })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialUpdates {
    /// Insert-side rows, drawn with replacement by adversarial weight.
    pub inserts: Vec<Row>,
    /// Delete-side rows, drawn uniformly without replacement.
    pub deletes: Vec<Row>,
    /// Set when every weight was zero and inserts were drawn uniformly.
    pub fell_back_uniform: bool,
}

pub fn select_adversarial_updates<R: Rng + ?Sized>(
    table: &Table,
    queries: &[LabeledQuery],
    insert_count: usize,
    delete_count: usize,
    rng: &mut R,
) -> Result<AdversarialUpdates> {
    let n = table.len();
    if delete_count > n {
        return Err(IceError::Precondition(format!("cannot delete {delete_count} of {n} rows")));
    }
    let mut fell_back_uniform = false;
    let inserts = if insert_count == 0 || n == 0 {
        Vec::new()
    } else {
        let w_size = ((queries.len() as f64 * ADVERSARIAL_QUERY_SHARE).round() as usize).max(1).min(queries.len());
        let chosen = rand::seq::index::sample(rng, queries.len(), w_size);
        let w: Vec<(QueryBox, f64)> = chosen
            .iter()
            .map(|i| (queries[i].qbox.clone(), queries[i].true_card as f64 / n as f64))
            .collect();
        let weights: Vec<f64> = table.rows.iter().map(|r| adversarial_weight(r, &w)).collect();
        match WeightedIndex::new(&weights) {
            Ok(dist) => (0..insert_count).map(|_| table.rows[dist.sample(rng)].clone()).collect(),
            Err(_) => {
                fell_back_uniform = true;
                (0..insert_count).map(|_| table.rows[rng.random_range(0..n)].clone()).collect()
            }
        }
    };
    let deletes = rand::seq::index::sample(rng, n, delete_count).iter().map(|i| table.rows[i].clone()).collect();
    Ok(AdversarialUpdates { inserts, deletes, fell_back_uniform })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum WorkloadOp {
    Insert {
        values: Row,
    },
    Delete {
        values: Row,
    },
    Modify {
        old: Row,
        new: Row,
    },
    Query {
        #[serde(rename = "box")]
        qbox: QueryBox,
        true_card: u64,
    },
}

impl WorkloadOp {
    pub fn is_query(&self) -> bool {
        matches!(self, WorkloadOp::Query { .. })
    }
}

/// First line of a workload file; ties the stream to the table it was built on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadHeader {
    pub schema_hash: String,
    pub table_rows: usize,
    pub spec: WorkloadSpec,
    pub fell_back_uniform: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub header: WorkloadHeader,
    pub ops: Vec<WorkloadOp>,
}

impl Workload {
    pub fn queries(&self) -> impl Iterator<Item = (&QueryBox, u64)> {
        self.ops.iter().filter_map(|op| match op {
            WorkloadOp::Query { qbox, true_card } => Some((qbox, *true_card)),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let mut header = serde_json::to_value(&self.header)?;
        header["op"] = serde_json::Value::from("header");
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for op in &self.ops {
            serde_json::to_writer(&mut w, op)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: std::io::Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => {
                let line = line?;
                let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse_err(1, e))?;
                if v.get("op").and_then(|o| o.as_str()) != Some("header") {
                    return Err(IceError::Parse { line: 1, message: "missing workload header".into() });
                }
                serde_json::from_value(v).map_err(|e| parse_err(1, e))?
            }
            None => return Err(IceError::Parse { line: 1, message: "empty workload file".into() }),
        };
        let mut ops = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            ops.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?);
        }
        Ok(Workload { header, ops })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_jsonl(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }

    /// Refuses a stream built against a different table.
    pub fn check_table(&self, table: &Table) -> Result<()> {
        let found = table.schema_hash();
        if found != self.header.schema_hash {
            return Err(IceError::SchemaMismatch { expected: self.header.schema_hash.clone(), found });
        }
        Ok(())
    }
}

fn parse_err(line: usize, e: serde_json::Error) -> IceError {
    IceError::Parse { line: line as u64, message: e.to_string() }
}

/// Reference multiset for replaying streams.
#[derive(Clone, Debug, Default)]
pub struct Multiset {
    counts: HashMap<Row, u64>,
}

impl Multiset {
    pub fn from_rows(rows: &[Row]) -> Self {
        let mut m = Multiset::default();
        for r in rows {
            m.insert(r.clone());
        }
        m
    }

    pub fn insert(&mut self, row: Row) {
        *self.counts.entry(row).or_insert(0) += 1;
    }

    pub fn remove(&mut self, row: &Row) -> bool {
        match self.counts.get_mut(row) {
            Some(c) if *c > 1 => {
                *c -= 1;
                true
            }
            Some(_) => {
                self.counts.remove(row);
                true
            }
            None => false,
        }
    }

    /// Applies an update op; queries are ignored.
    pub fn apply(&mut self, op: &WorkloadOp) -> Result<()> {
        match op {
            WorkloadOp::Insert { values } => self.insert(values.clone()),
            WorkloadOp::Delete { values } => {
                if !self.remove(values) {
                    return Err(IceError::Precondition(format!("delete of absent row {values:?}")));
                }
            }
            WorkloadOp::Modify { old, new } => {
                if !self.remove(old) {
                    return Err(IceError::Precondition(format!("modify of absent row {old:?}")));
                }
                self.insert(new.clone());
            }
            WorkloadOp::Query { .. } => {}
        }
        Ok(())
    }

    pub fn cardinality(&self, qbox: &QueryBox) -> u64 {
        self.counts.iter().filter(|(r, _)| qbox.contains(r)).map(|(_, c)| c).sum()
    }

    pub fn len(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn rows(&self) -> Vec<Row> {
        let mut out = Vec::with_capacity(self.len() as usize);
        for (r, &c) in &self.counts {
            out.extend(std::iter::repeat_n(r.clone(), c as usize));
        }
        out.sort_unstable();
        out
    }
}

/// Builds the interleaved stream: each query is preceded by an equal share of
/// the shuffled updates, and its `true_card` reflects the state at that point.
pub fn build_workload_stream(table: &Table, spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let queries = generate_queries(table, spec.query_count, rng.random(), spec.query_mode)?;
    let counts = op_counts(spec, table.len());

    let adv = select_adversarial_updates(
        table,
        &queries,
        counts.inserts + counts.modifies,
        counts.deletes + counts.modifies,
        &mut rng,
    )?;
    let mut ins = adv.inserts.into_iter();
    let mut del = adv.deletes.into_iter();
    let mut updates = Vec::with_capacity(counts.total());
    for _ in 0..counts.modifies {
        updates.push(WorkloadOp::Modify { old: del.next().unwrap(), new: ins.next().unwrap() });
    }
    updates.extend(del.map(|values| WorkloadOp::Delete { values }));
    updates.extend(ins.map(|values| WorkloadOp::Insert { values }));
    updates.shuffle(&mut rng);

    let mut state = Multiset::from_rows(&table.rows);
    let q = queries.len();
    let u = updates.len();
    let mut updates = updates.into_iter();
    let mut ops = Vec::with_capacity(u + q);
    for (i, query) in queries.into_iter().enumerate() {
        let batch = (i + 1) * u / q - i * u / q;
        for op in updates.by_ref().take(batch) {
            state.apply(&op)?;
            ops.push(op);
        }
        let true_card = state.cardinality(&query.qbox);
        ops.push(WorkloadOp::Query { qbox: query.qbox, true_card });
    }
    debug_assert!(updates.next().is_none());

    Ok(Workload {
        header: WorkloadHeader {
            schema_hash: table.schema_hash(),
            table_rows: table.len(),
            spec: *spec,
            fell_back_uniform: adv.fell_back_uniform,
        },
        ops,
    })
}

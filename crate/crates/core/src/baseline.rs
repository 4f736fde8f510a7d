//! Uniform reservoir sample, the comparison baseline.
//!
//! The default budget is one row per thousand table rows. Inserts follow
//! reservoir sampling with a budget that grows with the table; deleting a
//! sampled row shrinks the reservoir and is not refilled, since refilling
//! would need access to the full table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::workload::stream::WorkloadOp;
use crate::workload::table::{Row, Table};
use crate::zorder::QueryBox;

/// Sample rows per table row.
pub const SAMPLE_RATE: f64 = 1e-3;

/// `ceil(n / 1000)`; zero only for an empty table.
pub fn default_budget(n: u64) -> usize {
    (n as f64 * SAMPLE_RATE).ceil() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEstimate {
    pub est: f64,
    /// The reservoir held no rows.
    pub empty_warning: bool,
}

#[derive(Clone, Debug)]
pub struct Reservoir {
    rows: Vec<Row>,
    source_size: u64,
    capacity: Option<usize>,
    rng: ChaCha8Rng,
}

impl Reservoir {
    /// Uniform sample without replacement of `default_budget(N)` rows.
    pub fn build(table: &Table, seed: u64) -> Self {
        Self::build_inner(table, None, seed)
    }

    /// Uniform sample of a fixed `capacity` rows, regardless of table growth.
    pub fn with_capacity(table: &Table, capacity: usize, seed: u64) -> Self {
        Self::build_inner(table, Some(capacity), seed)
    }

    fn build_inner(table: &Table, capacity: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = table.len();
        let mut r = Reservoir { rows: Vec::new(), source_size: n as u64, capacity, rng: rng.clone() };
        let k = r.budget().min(n);
        r.rows = rand::seq::index::sample(&mut rng, n, k).iter().map(|i| table.rows[i].clone()).collect();
        r.rng = rng;
        r
    }

    pub fn budget(&self) -> usize {
        self.capacity.unwrap_or_else(|| default_budget(self.source_size))
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn source_size(&self) -> u64 {
        self.source_size
    }

    pub fn insert(&mut self, row: Row) {
        self.source_size += 1;
        if self.rows.len() < self.budget() {
            self.rows.push(row);
        } else if !self.rows.is_empty() {
            let j = self.rng.random_range(0..self.source_size);
            if (j as usize) < self.rows.len() {
                self.rows[j as usize] = row;
            }
        }
    }

    pub fn delete(&mut self, row: &Row) {
        self.source_size = self.source_size.saturating_sub(1);
        if let Some(i) = self.rows.iter().position(|r| r == row) {
            self.rows.swap_remove(i);
        }
    }

    pub fn apply(&mut self, op: &WorkloadOp) {
        match op {
            WorkloadOp::Insert { values } => self.insert(values.clone()),
            WorkloadOp::Delete { values } => self.delete(values),
            WorkloadOp::Modify { old, new } => {
                self.delete(old);
                self.insert(new.clone());
            }
            WorkloadOp::Query { .. } => {}
        }
    }

    /// `hits / |sample| * N`.
    pub fn estimate(&self, qbox: &QueryBox) -> SampleEstimate {
        if self.rows.is_empty() {
            return SampleEstimate { est: 0.0, empty_warning: true };
        }
        let hits = self.rows.iter().filter(|r| qbox.contains(r)).count();
        SampleEstimate { est: hits as f64 / self.rows.len() as f64 * self.source_size as f64, empty_warning: false }
    }

    /// Approximate heap footprint of the sample.
    pub fn model_bytes(&self) -> usize {
        self.rows.iter().map(|r| r.len() * std::mem::size_of::<u64>()).sum()
    }
}

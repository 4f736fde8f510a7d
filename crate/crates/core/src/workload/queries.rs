//! Range-query generation.
//!
//! A query is centred on a uniformly drawn row; each attribute gets a width
//! drawn log-uniformly over its domain, so selectivities spread across many
//! orders of magnitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::workload::table::{oracle_cardinality, Table};
use crate::zorder::QueryBox;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    #[default]
    Default,
    /// Centres drawn only from rows in the upper half of the first attribute.
    DataDrift,
    /// Predicates concentrated on the last attribute; the others are mostly
    /// left unrestricted.
    QueryDrift,
}

impl std::str::FromStr for QueryMode {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(QueryMode::Default),
            "data-drift" => Ok(QueryMode::DataDrift),
            "query-drift" => Ok(QueryMode::QueryDrift),
            _ => Err(IceError::InvalidArgument(format!("unknown query mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub qbox: QueryBox,
    pub true_card: u64,
}

/// Width in `0..domain`, log-uniform on `[1, domain]` before subtracting one.
fn log_uniform_width<R: Rng>(rng: &mut R, domain: u64) -> u64 {
    let w = (rng.random::<f64>() * (domain as f64).ln()).exp().floor() as u64;
    w.clamp(1, domain) - 1
}

fn box_around(center: &[u64], widths: &[u64], domains: &[u64]) -> QueryBox {
    let mut low = Vec::with_capacity(center.len());
    let mut high = Vec::with_capacity(center.len());
    for ((&c, &w), &d) in center.iter().zip(widths).zip(domains) {
        let lo = c.saturating_sub(w / 2);
        let hi = (lo + w).min(d - 1);
        low.push(hi.saturating_sub(w).min(lo));
        high.push(hi);
    }
    QueryBox { low, high }
}

/// `count` boxes labelled with their true cardinality on `table`.
pub fn generate_queries(table: &Table, count: usize, seed: u64, mode: QueryMode) -> Result<Vec<LabeledQuery>> {
    if table.is_empty() {
        return Err(IceError::Precondition("cannot generate queries over an empty table".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = table.attrs();
    let domains: Vec<u64> = (0..m).map(|a| table.domain_size(a)).collect();

    let pool: Vec<usize> = match mode {
        QueryMode::DataDrift => {
            let mut firsts: Vec<u64> = table.rows.iter().map(|r| r[0]).collect();
            firsts.sort_unstable();
            let median = firsts[firsts.len() / 2];
            (0..table.len()).filter(|&i| table.rows[i][0] >= median).collect()
        }
        _ => (0..table.len()).collect(),
    };

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let center = &table.rows[pool[rng.random_range(0..pool.len())]];
        let widths: Vec<u64> = (0..m)
            .map(|a| match mode {
                QueryMode::QueryDrift if a + 1 < m && rng.random_bool(0.8) => domains[a],
                _ => log_uniform_width(&mut rng, domains[a]),
            })
            .collect();
        let qbox = box_around(center, &widths, &domains);
        let true_card = oracle_cardinality(&table.rows, &qbox);
        out.push(LabeledQuery { qbox, true_card });
    }
    Ok(out)
}

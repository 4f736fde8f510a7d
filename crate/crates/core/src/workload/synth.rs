//! Synthetic tables for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::workload::table::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Every attribute tracks the first one plus Gaussian noise.
    Correlated,
    /// Gaussian blobs with skewed cluster sizes.
    Clustered,
    /// Independent Zipf-distributed attributes.
    Zipfian,
    /// Independent uniform attributes.
    Uniform,
}

impl std::str::FromStr for SynthKind {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlated" => Ok(SynthKind::Correlated),
            "clustered" => Ok(SynthKind::Clustered),
            "zipfian" | "zipf" => Ok(SynthKind::Zipfian),
            "uniform" => Ok(SynthKind::Uniform),
            _ => Err(IceError::InvalidArgument(format!("unknown dataset kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub rows: usize,
    pub attrs: usize,
    /// Raw values lie in `0..domain`.
    pub domain: u64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, rows: usize, attrs: usize, domain: u64, seed: u64) -> Self {
        SynthSpec { kind, rows, attrs, domain, seed }
    }
}

/// Raw rows, before dictionary encoding.
pub fn raw_rows(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.domain.max(2) as f64;
    let clamp = |x: f64| x.round().clamp(0.0, d - 1.0);
    match spec.kind {
        SynthKind::Uniform => (0..spec.rows)
            .map(|_| (0..spec.attrs).map(|_| rng.random_range(0..spec.domain.max(1)) as f64).collect())
            .collect(),
        SynthKind::Correlated => {
            let noise = Normal::new(0.0, d * 0.05).unwrap();
            (0..spec.rows)
                .map(|_| {
                    let base = rng.random_range(0.0..d);
                    (0..spec.attrs)
                        .map(|a| if a == 0 { clamp(base) } else { clamp(base + noise.sample(&mut rng)) })
                        .collect()
                })
                .collect()
        }
        SynthKind::Clustered => {
            let k = 24;
            let centers: Vec<Vec<f64>> =
                (0..k).map(|_| (0..spec.attrs).map(|_| rng.random_range(0.0..d)).collect()).collect();
            let spreads: Vec<f64> = (0..k).map(|_| d * rng.random_range(0.004..0.04)).collect();
            let pick = Zipf::new(k as f64, 1.1).unwrap();
            (0..spec.rows)
                .map(|_| {
                    let c = pick.sample(&mut rng) as usize - 1;
                    let noise = Normal::new(0.0, spreads[c]).unwrap();
                    centers[c].iter().map(|x| clamp(x + noise.sample(&mut rng))).collect()
                })
                .collect()
        }
        SynthKind::Zipfian => {
            let z = Zipf::new(d, 1.2).unwrap();
            // shuffle value identities per column so skew is not tied to order
            let perms: Vec<Vec<u64>> = (0..spec.attrs)
                .map(|_| {
                    let mut p: Vec<u64> = (0..d as u64).collect();
                    rand::seq::SliceRandom::shuffle(&mut p[..], &mut rng);
                    p
                })
                .collect();
            (0..spec.rows)
                .map(|_| (0..spec.attrs).map(|a| perms[a][z.sample(&mut rng) as usize - 1] as f64).collect())
                .collect()
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Table> {
    let names: Vec<String> = (0..spec.attrs).map(|a| format!("a{a}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Table::from_numeric_rows(&refs, &raw_rows(spec))
}

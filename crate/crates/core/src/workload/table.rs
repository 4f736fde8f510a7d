use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IceError, Result};
use crate::zorder::{AttributeSchema, QueryBox, ZKey};

pub type Row = Vec<u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Numeric }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Categorical }
    }
}

/// Value-to-code map of one column. Codes are dense: `0..len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum Dictionary {
    /// Sorted distinct values; the code is the rank, so order is preserved.
    Numeric(Vec<f64>),
    /// Values in first-seen order.
    Categorical(Vec<String>),
}

impl Dictionary {
    pub fn len(&self) -> usize {
        match self {
            Dictionary::Numeric(v) => v.len(),
            Dictionary::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Code for a raw value. Numeric values missing from the snapshot clamp to
    /// the nearest entry; unknown categories are an error.
    pub fn encode(&self, raw: &str) -> Result<u64> {
        match self {
            Dictionary::Numeric(vals) => {
                let x: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| IceError::InvalidArgument(format!("`{raw}` is not numeric")))?;
                Ok(nearest_code(vals, x))
            }
            Dictionary::Categorical(vals) => vals
                .iter()
                .position(|v| v == raw)
                .map(|i| i as u64)
                .ok_or_else(|| IceError::InvalidArgument(format!("unknown category `{raw}`"))),
        }
    }

    /// Codes covering the raw range `[low, high]`, or `None` when no stored
    /// value falls inside it. Numeric bounds round inward; categorical bounds
    /// must be known categories and span first-seen order.
    pub fn range_codes(&self, low: &str, high: &str) -> Result<Option<(u64, u64)>> {
        match self {
            Dictionary::Numeric(vals) => {
                let num = |raw: &str| -> Result<f64> {
                    raw.trim().parse().map_err(|_| IceError::InvalidArgument(format!("`{raw}` is not numeric")))
                };
                let (lo, hi) = (num(low)?, num(high)?);
                let first = vals.partition_point(|v| *v < lo);
                let past = vals.partition_point(|v| *v <= hi);
                Ok((first < past).then(|| (first as u64, past as u64 - 1)))
            }
            Dictionary::Categorical(_) => {
                let (lo, hi) = (self.encode(low)?, self.encode(high)?);
                Ok((lo <= hi).then_some((lo, hi)))
            }
        }
    }

    pub fn decode(&self, code: u64) -> Option<String> {
        match self {
            Dictionary::Numeric(v) => v.get(code as usize).map(|x| x.to_string()),
            Dictionary::Categorical(v) => v.get(code as usize).cloned(),
        }
    }
}

fn nearest_code(sorted: &[f64], x: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let i = sorted.partition_point(|v| *v < x);
    if i == 0 {
        return 0;
    }
    if i == sorted.len() {
        return (i - 1) as u64;
    }
    // ties go to the smaller code
    if sorted[i] - x < x - sorted[i - 1] {
        i as u64
    } else {
        (i - 1) as u64
    }
}

/// Bits needed for `distinct` dense codes, at least 1.
pub fn bits_for(distinct: usize) -> u8 {
    if distinct <= 2 {
        1
    } else {
        (usize::BITS - (distinct - 1).leading_zeros()) as u8
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub dictionary: Dictionary,
}

/// An encoded relational table: every attribute is a dense code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub schema: AttributeSchema,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl Table {
    /// Builds from raw string records, one dictionary per column.
    pub fn from_records(specs: &[ColumnSpec], records: &[Vec<String>]) -> Result<Self> {
        let m = specs.len();
        if m == 0 {
            return Err(IceError::InvalidSchema("table needs at least one column".into()));
        }
        let mut dictionaries = Vec::with_capacity(m);
        for (c, spec) in specs.iter().enumerate() {
            let dict = match spec.kind {
                ColumnKind::Numeric => {
                    let mut vals = Vec::with_capacity(records.len());
                    for (line, rec) in records.iter().enumerate() {
                        let x: f64 = rec[c].trim().parse().map_err(|_| IceError::Parse {
                            line: line as u64 + 1,
                            message: format!("column `{}`: `{}` is not numeric", spec.name, rec[c]),
                        })?;
                        if x.is_nan() {
                            return Err(IceError::Parse {
                                line: line as u64 + 1,
                                message: format!("column `{}`: NaN", spec.name),
                            });
                        }
                        vals.push(x);
                    }
                    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    vals.dedup();
                    Dictionary::Numeric(vals)
                }
                ColumnKind::Categorical => {
                    let mut seen = HashMap::new();
                    let mut vals = Vec::new();
                    for rec in records {
                        if !seen.contains_key(&rec[c]) {
                            seen.insert(rec[c].clone(), vals.len());
                            vals.push(rec[c].clone());
                        }
                    }
                    Dictionary::Categorical(vals)
                }
            };
            dictionaries.push(dict);
        }

        let betas: Vec<u8> = dictionaries.iter().map(|d| bits_for(d.len())).collect();
        let schema = AttributeSchema::new(betas)?;

        // Encode through lookup tables rather than per-value searches.
        let mut rows = vec![Vec::with_capacity(m); records.len()];
        for (c, dict) in dictionaries.iter().enumerate() {
            match dict {
                Dictionary::Numeric(vals) => {
                    for (row, rec) in rows.iter_mut().zip(records) {
                        let x: f64 = rec[c].trim().parse().unwrap();
                        row.push(vals.partition_point(|v| *v < x) as u64);
                    }
                }
                Dictionary::Categorical(vals) => {
                    let lookup: HashMap<&str, u64> =
                        vals.iter().enumerate().map(|(i, v)| (v.as_str(), i as u64)).collect();
                    for (row, rec) in rows.iter_mut().zip(records) {
                        row.push(lookup[rec[c].as_str()]);
                    }
                }
            }
        }
        let columns = specs
            .iter()
            .zip(dictionaries)
            .map(|(s, d)| Column { name: s.name.clone(), dictionary: d })
            .collect();
        Ok(Table { schema, columns, rows })
    }

    /// Builds from numeric columns, encoding each through its dense-rank dictionary.
    pub fn from_numeric_rows(names: &[&str], raw: &[Vec<f64>]) -> Result<Self> {
        let specs: Vec<ColumnSpec> = names.iter().map(|n| ColumnSpec::numeric(*n)).collect();
        let records: Vec<Vec<String>> = raw.iter().map(|r| r.iter().map(|x| x.to_string()).collect()).collect();
        if let Some((i, _)) = raw.iter().enumerate().find(|(_, r)| r.len() != names.len()) {
            return Err(IceError::Parse { line: i as u64 + 1, message: "row arity mismatch".into() });
        }
        Self::from_records(&specs, &records)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn attrs(&self) -> usize {
        self.schema.attrs()
    }

    /// Number of codes of attribute `attr`.
    pub fn domain_size(&self, attr: usize) -> u64 {
        self.columns[attr].dictionary.len().max(1) as u64
    }

    pub fn keys(&self) -> Vec<ZKey> {
        self.rows.iter().map(|r| self.schema.encode_unchecked(r)).collect()
    }

    /// Stable identifier of the encoding: widths, names and dictionary sizes.
    pub fn schema_hash(&self) -> String {
        let mut h = Sha256::new();
        for (c, beta) in self.columns.iter().zip(self.schema.betas()) {
            h.update(c.name.as_bytes());
            h.update([0u8, *beta]);
            h.update((c.dictionary.len() as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Box in code space selecting the same rows as the raw per-column
    /// bounds, or `None` when some column range holds no stored value.
    pub fn box_from_raw(&self, low: &[String], high: &[String]) -> Result<Option<QueryBox>> {
        if low.len() != self.attrs() || high.len() != self.attrs() {
            return Err(IceError::InvalidArgument("bound count does not match column count".into()));
        }
        let ranges: Vec<Option<(u64, u64)>> = low
            .iter()
            .zip(high)
            .zip(&self.columns)
            .map(|((l, h), c)| c.dictionary.range_codes(l, h))
            .collect::<Result<_>>()?;
        let Some(ranges) = ranges.into_iter().collect::<Option<Vec<_>>>() else {
            return Ok(None);
        };
        QueryBox::new(ranges.iter().map(|r| r.0).collect(), ranges.iter().map(|r| r.1).collect()).map(Some)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Column specs; inferred (numeric if every value parses) when `None`.
    pub columns: Option<Vec<ColumnSpec>>,
}

pub fn ingest_csv(path: &Path, opts: &CsvOptions) -> Result<Table> {
    let f = std::fs::File::open(path)?;
    ingest_csv_reader(f, opts)
}

pub fn ingest_csv_reader<R: std::io::Read>(reader: R, opts: &CsvOptions) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(opts.has_header).flexible(true).from_reader(reader);
    let header: Option<Vec<String>> =
        if opts.has_header { Some(rdr.headers()?.iter().map(str::to_owned).collect()) } else { None };
    let mut records = Vec::new();
    let mut width = opts.columns.as_ref().map(Vec::len).or(header.as_ref().map(Vec::len));
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(IceError::Parse { line, message: format!("expected {w} fields, found {}", rec.len()) });
        }
        records.push(rec.iter().map(str::to_owned).collect::<Vec<_>>());
    }
    let width = width.ok_or_else(|| IceError::Parse { line: 1, message: "no columns".into() })?;
    let specs = match &opts.columns {
        Some(s) => s.clone(),
        None => (0..width)
            .map(|c| {
                let name = header.as_ref().map_or_else(|| format!("c{c}"), |h| h[c].clone());
                let numeric = records.iter().all(|r| r[c].trim().parse::<f64>().is_ok_and(|x| !x.is_nan()));
                if numeric {
                    ColumnSpec::numeric(name)
                } else {
                    ColumnSpec::categorical(name)
                }
            })
            .collect(),
    };
    Table::from_records(&specs, &records).map_err(|e| match e {
        // report file line numbers rather than record ordinals
        IceError::Parse { line, message } => {
            IceError::Parse { line: line + u64::from(opts.has_header), message }
        }
        other => other,
    })
}

/// Ground truth: full scan of `rows`.
pub fn oracle_cardinality(rows: &[Row], qbox: &QueryBox) -> u64 {
    rows.iter().filter(|r| qbox.contains(r)).count() as u64
}

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ice_core::bench::{run_benchmark, sweep, write_csv, BenchOptions, BenchReport, IceParams, Method, SweepParam};
use ice_core::estimator::{estimate, EstimatorConfig, DEFAULT_BUDGET, DEFAULT_CONFIDENCE, DEFAULT_Q_BOUND};
use ice_core::filter::{FilterConfig, SplitStrategy};
use ice_core::index::{IceIndex, DEFAULT_FANOUT};
use ice_core::workload::queries::QueryMode;
use ice_core::workload::stream::{build_workload_stream, op_counts, Workload, WorkloadKind, WorkloadSpec};
use ice_core::workload::synth::{generate, SynthKind, SynthSpec};
use ice_core::workload::table::{ingest_csv, oracle_cardinality, ColumnSpec, CsvOptions, Table};
use ice_core::{IceError, QueryBox};
use serde::Serialize;

/// Index-based cardinality estimation: build, query and benchmark.
#[derive(Debug, Parser)]
#[command(name = "ice", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "ICE_SEED", default_value_t = 0)]
    seed: u64,
    /// B+-tree node capacity.
    #[arg(long, global = true, env = "ICE_FANOUT", default_value_t = DEFAULT_FANOUT)]
    fanout: usize,
    /// Sample budget per estimate.
    #[arg(long, global = true, env = "ICE_BUDGET", default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Maximum recursion depth of the interval filter.
    #[arg(long, global = true, env = "ICE_DMAX", default_value_t = 6)]
    dmax: u32,
    /// Largest tolerated Q-error.
    #[arg(long, global = true, env = "ICE_QBOUND", default_value_t = DEFAULT_Q_BOUND)]
    qbound: f64,
    /// Confidence of the Q-error bound.
    #[arg(long, global = true, env = "ICE_CONFIDENCE", default_value_t = DEFAULT_CONFIDENCE)]
    confidence: f64,
    /// Interval split strategy: `midpoint` or `opt1`.
    #[arg(long, global = true, env = "ICE_STRATEGY", default_value = "midpoint")]
    strategy: SplitStrategy,
    /// Exact-scan fallback when the Q-error bound is at risk.
    #[arg(long, global = true, env = "ICE_HYBRID", default_value = "on")]
    hybrid: Toggle,
    /// Replay benchmarks with updates ignored.
    #[arg(long, global = true, env = "ICE_FREEZE")]
    freeze: bool,
    /// Output path; standard output when absent.
    #[arg(long, global = true, env = "ICE_OUT")]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, env = "ICE_FORMAT", default_value = "json")]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a CSV file into a table file.
    Ingest {
        csv: PathBuf,
        /// The file has no header row.
        #[arg(long)]
        no_header: bool,
        /// Columns to treat as categorical, by name or zero-based position.
        #[arg(long, value_delimiter = ',')]
        categorical: Vec<String>,
    },
    /// Generate a synthetic table file.
    Synth {
        #[arg(long, default_value = "clustered")]
        kind: SynthKind,
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        attrs: usize,
        /// Raw values lie in `0..domain`.
        #[arg(long, default_value_t = 1024)]
        domain: u64,
    },
    /// Generate a query and update stream for a table.
    GenWorkload {
        #[arg(long)]
        table: PathBuf,
        /// `static`, `insert-heavy` or `update-heavy`.
        #[arg(long, default_value = "static")]
        kind: WorkloadKind,
        #[arg(long, default_value_t = 2048)]
        queries: usize,
        /// Update operations as a fraction of the table size.
        #[arg(long, default_value_t = 0.2)]
        update_fraction: f64,
        /// `default`, `data-drift` or `query-drift`.
        #[arg(long, default_value = "default")]
        query_mode: QueryMode,
    },
    /// Bulk-load an index and write its snapshot.
    Build {
        #[arg(long)]
        table: PathBuf,
    },
    /// Replay a workload and report Q-error and latency.
    Bench {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Methods to run: `ice`, `sample`, `oracle`.
        #[arg(long, value_delimiter = ',', default_value = "ice")]
        methods: Vec<MethodName>,
        /// Reservoir size; one row per thousand when absent.
        #[arg(long)]
        sample_capacity: Option<usize>,
        /// Evaluate independent queries concurrently; latencies are then unreliable.
        #[arg(long)]
        parallel: bool,
    },
    /// Replay a workload once per value of one ICE parameter.
    Sweep {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// `budget`, `dmax`, `strategy`, `qbound` or `confidence`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        parallel: bool,
    },
    /// Estimate the cardinality of one box.
    Estimate {
        #[command(flatten)]
        target: BoxTarget,
        /// Index snapshot to query instead of bulk-loading the table.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Exact cardinality of one box by full scan.
    Oracle {
        #[command(flatten)]
        target: BoxTarget,
    },
}

#[derive(Debug, Args)]
struct BoxTarget {
    #[arg(long)]
    table: Option<PathBuf>,
    /// Lower bounds, one per attribute.
    #[arg(long, value_delimiter = ',', required = true)]
    low: Vec<String>,
    /// Upper bounds, one per attribute.
    #[arg(long, value_delimiter = ',', required = true)]
    high: Vec<String>,
    /// Bounds are raw column values, mapped through the table dictionaries.
    #[arg(long)]
    raw: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodName {
    Ice,
    Sample,
    Oracle,
}

impl Global {
    fn ice_params(&self) -> IceParams {
        IceParams {
            fanout: self.fanout,
            filter: FilterConfig { max_depth: self.dmax, strategy: self.strategy },
            estimator: EstimatorConfig {
                budget: self.budget,
                q_bound: self.qbound,
                confidence: self.confidence,
                hybrid: self.hybrid == Toggle::On,
                gaussian_approx: false,
                seed: self.seed,
            },
        }
    }

    fn sink(&self) -> Result<Box<dyn Write>, IceError> {
        Ok(match &self.out {
            Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
            None => Box::new(std::io::stdout().lock()),
        })
    }

    fn required_out(&self, what: &str) -> Result<&Path, IceError> {
        self.out.as_deref().ok_or_else(|| IceError::InvalidArgument(format!("{what} needs --out <path>")))
    }

    /// Writes one record in the chosen format.
    fn emit<T: Serialize>(&self, value: &T) -> Result<(), IceError> {
        let mut w = self.sink()?;
        match self.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut w, value)?;
                writeln!(w)?;
            }
            Format::Csv => {
                let mut c = csv::Writer::from_writer(w);
                c.serialize(value)?;
                c.flush()?;
            }
        }
        Ok(())
    }

    fn emit_reports(&self, reports: &[BenchReport]) -> Result<(), IceError> {
        let mut w = self.sink()?;
        match self.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut w, reports)?;
                writeln!(w)?;
            }
            Format::Csv => write_csv(reports, w)?,
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TableSummary<'a> {
    path: &'a Path,
    rows: usize,
    betas: &'a [u8],
    key_bits: u32,
    schema_hash: String,
}

impl<'a> TableSummary<'a> {
    fn new(path: &'a Path, t: &'a Table) -> Self {
        TableSummary {
            path,
            rows: t.len(),
            betas: t.schema.betas(),
            key_bits: t.schema.total_bits(),
            schema_hash: t.schema_hash(),
        }
    }
}

/// Summaries of written artifacts always go to standard output.
fn print_json<T: Serialize>(value: &T) -> Result<(), IceError> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

/// `None` when raw bounds select no stored value in some column.
fn resolve_box(target: &BoxTarget, table: Option<&Table>) -> Result<Option<QueryBox>, IceError> {
    if target.raw {
        let t = table.ok_or_else(|| IceError::InvalidArgument("--raw needs --table".into()))?;
        return t.box_from_raw(&target.low, &target.high);
    }
    let parse = |v: &[String]| -> Result<Vec<u64>, IceError> {
        v.iter()
            .map(|s| s.trim().parse::<u64>().map_err(|e| IceError::InvalidArgument(format!("bound `{s}`: {e}"))))
            .collect()
    };
    QueryBox::new(parse(&target.low)?, parse(&target.high)?).map(Some)
}

fn load_bench_inputs(table: &Path, workload: &Path) -> Result<(Table, Workload), IceError> {
    let t = Table::load_json(table)?;
    let w = Workload::load(workload)?;
    w.check_table(&t)?;
    Ok((t, w))
}

fn run(cli: Cli) -> Result<(), IceError> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { csv, no_header, categorical } => {
            let out = g.required_out("ingest")?;
            let columns = if categorical.is_empty() {
                None
            } else {
                let probe = ingest_csv(csv, &CsvOptions { has_header: !no_header, columns: None })?;
                let specs = probe
                    .columns
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let is_cat = categorical.iter().any(|k| k == &c.name || k.parse::<usize>() == Ok(i));
                        if is_cat { ColumnSpec::categorical(&c.name) } else { ColumnSpec::numeric(&c.name) }
                    })
                    .collect();
                Some(specs)
            };
            let t = ingest_csv(csv, &CsvOptions { has_header: !no_header, columns })?;
            t.save_json(out)?;
            print_json(&TableSummary::new(out, &t))
        }
        Command::Synth { kind, rows, attrs, domain } => {
            let out = g.required_out("synth")?;
            let t = generate(&SynthSpec::new(*kind, *rows, *attrs, *domain, g.seed))?;
            t.save_json(out)?;
            print_json(&TableSummary::new(out, &t))
        }
        Command::GenWorkload { table, kind, queries, update_fraction, query_mode } => {
            let out = g.required_out("gen-workload")?;
            let t = Table::load_json(table)?;
            let spec = WorkloadSpec {
                kind: *kind,
                query_count: *queries,
                update_fraction: *update_fraction,
                seed: g.seed,
                query_mode: *query_mode,
            };
            let w = build_workload_stream(&t, &spec)?;
            w.save(out)?;
            let counts = op_counts(&spec, t.len());
            print_json(&serde_json::json!({
                "path": out,
                "queries": spec.query_count,
                "inserts": counts.inserts,
                "deletes": counts.deletes,
                "modifies": counts.modifies,
                "updates_per_query": counts.total() as f64 / spec.query_count as f64,
                "fell_back_uniform": w.header.fell_back_uniform,
                "schema_hash": w.header.schema_hash,
            }))
        }
        Command::Build { table } => {
            let out = g.required_out("build")?;
            let t = Table::load_json(table)?;
            let started = std::time::Instant::now();
            let idx = IceIndex::bulk_load(t.schema.clone(), t.keys(), g.fanout)?;
            let build_ms = started.elapsed().as_secs_f64() * 1e3;
            let bytes = idx.to_snapshot_bytes();
            std::fs::write(out, &bytes)?;
            print_json(&serde_json::json!({
                "path": out,
                "rows": idx.total_count(),
                "distinct_keys": idx.distinct_keys(),
                "depth": idx.depth(),
                "fanout": idx.fanout(),
                "model_bytes": bytes.len(),
                "build_ms": build_ms,
            }))
        }
        Command::Bench { table, workload, methods, sample_capacity, parallel } => {
            let (t, w) = load_bench_inputs(table, workload)?;
            let opts = BenchOptions { freeze: g.freeze, parallel: *parallel };
            let reports = methods
                .iter()
                .map(|m| {
                    let method = match m {
                        MethodName::Ice => Method::Ice(g.ice_params()),
                        MethodName::Sample => Method::Sample { capacity: *sample_capacity, seed: g.seed },
                        MethodName::Oracle => Method::Oracle,
                    };
                    run_benchmark(&t, &w, &method, opts)
                })
                .collect::<Result<Vec<_>, _>>()?;
            g.emit_reports(&reports)
        }
        Command::Sweep { table, workload, param, values, parallel } => {
            let param: SweepParam = param.parse()?;
            let (t, w) = load_bench_inputs(table, workload)?;
            let opts = BenchOptions { freeze: g.freeze, parallel: *parallel };
            let reports = sweep(&t, &w, g.ice_params(), param, values, opts)?;
            g.emit_reports(&reports)
        }
        Command::Estimate { target, index } => {
            let table = target.table.as_deref().map(Table::load_json).transpose()?;
            let idx = match (index, &table) {
                (Some(p), _) => IceIndex::read_snapshot(std::io::BufReader::new(std::fs::File::open(p)?))?,
                (None, Some(t)) => IceIndex::bulk_load(t.schema.clone(), t.keys(), g.fanout)?,
                (None, None) => return Err(IceError::InvalidArgument("estimate needs --table or --index".into())),
            };
            if let Some(t) = &table {
                if t.schema != *idx.schema() {
                    return Err(IceError::SchemaMismatch {
                        expected: format!("{:?}", t.schema.betas()),
                        found: format!("{:?}", idx.schema().betas()),
                    });
                }
            }
            let Some(qbox) = resolve_box(target, table.as_ref())? else {
                return g.emit(&EstimateRecord::empty(g.budget));
            };
            let p = g.ice_params();
            let r = estimate(&idx, &qbox, p.filter, &p.estimator)?;
            g.emit(&EstimateRecord {
                est: r.est,
                count: r.count,
                budget: r.budget,
                r_sum: r.r_sum,
                overflow_prob: r.overflow_prob,
                used_exact_scan: r.used_exact_scan,
                intervals: r.intervals,
                elapsed_us: r.elapsed.as_secs_f64() * 1e6,
            })
        }
        Command::Oracle { target } => {
            let path = target.table.as_deref().ok_or_else(|| IceError::InvalidArgument("oracle needs --table".into()))?;
            let t = Table::load_json(path)?;
            let cardinality = match resolve_box(target, Some(&t))? {
                Some(qbox) => {
                    t.schema.validate_box(&qbox)?;
                    oracle_cardinality(&t.rows, &qbox)
                }
                None => 0,
            };
            g.emit(&OracleRecord { cardinality, rows: t.len() })
        }
    }
}

#[derive(Serialize)]
struct EstimateRecord {
    est: f64,
    count: u64,
    budget: u64,
    r_sum: u64,
    overflow_prob: f64,
    used_exact_scan: bool,
    intervals: usize,
    elapsed_us: f64,
}

impl EstimateRecord {
    fn empty(budget: u64) -> Self {
        EstimateRecord {
            est: 0.0,
            count: 0,
            budget,
            r_sum: 0,
            overflow_prob: 0.0,
            used_exact_scan: false,
            intervals: 0,
            elapsed_us: 0.0,
        }
    }
}

#[derive(Serialize)]
struct OracleRecord {
    cardinality: u64,
    rows: usize,
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}

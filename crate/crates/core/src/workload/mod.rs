//! Tables, query sets and dynamic update streams.

pub mod queries;
pub mod stream;
pub mod synth;
pub mod table;

pub use queries::{generate_queries, LabeledQuery, QueryMode};
pub use stream::{build_workload_stream, Multiset, Workload, WorkloadKind, WorkloadOp, WorkloadSpec};
pub use synth::{generate, SynthKind, SynthSpec};
pub use table::{ingest_csv, oracle_cardinality, ColumnSpec, CsvOptions, Row, Table};

pub mod baseline;
pub mod bench;
pub mod error;
pub mod estimator;
pub mod filter;
pub mod index;
pub mod workload;
pub mod zorder;

pub use error::{IceError, Result};
pub use estimator::{estimate, EstimateResult, EstimatorConfig};
pub use filter::{recursive_filter, FilterConfig, SplitStrategy, ZInterval};
pub use index::{IceIndex, RangeCount};
pub use zorder::{AttributeSchema, QueryBox, ZKey};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/zorder.md")]
    mod zorder {}
    #[doc = include_str!("../../../book/src/counted-index.md")]
    mod counted_index {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    mod workloads {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

//! Query workloads: data-centric generation, dedup and labeling, and
//! stratified train/valid/test splits.

mod generate;
mod split;

pub use generate::{finalize, gen_join, gen_single_relation, records, JoinGenOptions};
pub use split::{split, Split, SplitMetadata, StratumCounts, WorkloadSummary, DEFAULT_FRACTIONS, MIN_STRATUM};

//! Splitting the backbone weights into a stable (neocortex) part and an
//! adaptive (hippocampus) part from their accumulated training variation.

mod ledger;
mod partition;

pub use ledger::{LedgerSummary, VariationLedger};
pub use partition::{
    apply_freeze, build_partition, select_stable_flat, select_stable_indices, warmup_stability_check,
    ParameterPartition, PartitionStats,
};

//! Mesh contraction toward a curve skeleton and the collapse of the
//! contracted mesh into a 1-D graph.

mod contract;
mod surgery;

pub use contract::{
    contract, contract_step, contract_with_history, contraction_system, ContractionConfig,
    ContractionOutcome, ContractionState,
};
pub use surgery::{coarsen_chains, connectivity_surgery, edge_partition, SkeletonGraph, SurgeryConfig};

//! Task allocation on heterogeneous edge/fog/cloud networks by products of
//! orthogonal subspace measures.

pub mod allocator;
pub mod capability;
pub mod catalog;
pub mod graph;
pub mod network;
pub mod stochastics;
pub mod subspaces;

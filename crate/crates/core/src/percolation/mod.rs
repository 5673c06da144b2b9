//! Bond percolation on the ladder: configurations, exact samplers and
//! cluster decomposition.

pub mod cluster;
pub mod communication;
pub mod cycles;
pub mod sampler;
pub mod window;

pub use cluster::{crossing_cluster, crossing_exists, find_preregeneration_points, top_isolated};
pub use communication::{backwards_mask, classify_communication, decompose, forwards_mask, ClusterDecomposition, Trap};
pub use cycles::{
    build_cycle_stationary_env, extract_cycles, harvest_cycles, Cycle, CycleSource, CycleStationaryEnv, PoolSource,
    SamplerSource, DEFAULT_MARGIN,
};
pub use sampler::{
    enumerate_conditioned_distribution, sample_window_conditioned, sample_window_rejection,
    sample_window_unconditioned, ConditionedSampler, EnumeratedDistribution,
};
pub use window::{Vertex, WindowConfig};

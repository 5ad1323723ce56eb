//! Inter-group connectivity counts, channel dependency patterns and
//! multiply-accumulate accounting.

mod connectivity;
mod cost;
mod dependency;

pub use connectivity::{connectivity_bruteforce, connectivity_formula, ConnectivityReport};
pub use cost::{cost_of_layers, count_cost, count_cost_with, CostEntry, CostPolicy, CostReport, LayerInfo, OpKind};
pub use dependency::{
    bottleneck_path_pattern, conv_pattern, dependency_pattern, perturbation_pattern, shuffle_pattern,
    ChannelDependency, DependencyPattern,
};

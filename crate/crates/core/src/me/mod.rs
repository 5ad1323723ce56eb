//! Merging and evolution operations and the ME module built from them.
//!
//! The fusion branch compresses the shuffled bottleneck map into a narrow
//! `fusion_channels`-wide map with a dense pointwise convolution (merging),
//! runs a 3×3 convolution over it and expands it back with another pointwise
//! convolution (evolution). Its output multiplies (or is added to) the
//! depthwise output of the residual branch before the second pointwise
//! group convolution.

mod config;
mod evolution;
mod merging;
mod module;

pub use config::MEModuleConfig;
pub use evolution::{evolution_forward, EvolutionOp};
pub use merging::{merging_forward, MergingOp};
pub use module::{FusionHook, MEModule};

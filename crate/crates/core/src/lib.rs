//! Compact convolutional networks built from merging-and-evolution (ME)
//! modules.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense NCHW `f64` tensors and channel-wise helpers.
//! * [`layers`]: convolutions, batch normalization, activations, pooling,
//!   channel shuffle and the classifier, each with a backward pass.
//! * [`me`]: merging and evolution operations and the ME module.
//! * [`menet`]: network configuration, model-name notation and assembly.
//! * [`analysis`]: connectivity counts, dependency patterns and MAC counts.
//! * [`training`]: loss, SGD, schedules, datasets, the training loop and
//!   finite-difference gradient checks.

pub mod analysis;
pub mod error;
pub mod layers;
pub mod me;
pub mod menet;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use layers::{BnMode, ConvSpec, Layer, Param};
pub use me::{FusionHook, MEModule, MEModuleConfig};
pub use menet::{build_menet, DensePointwise, MENetConfig, Network};
pub use tensor::{CombineMode, Shape4, Tensor};

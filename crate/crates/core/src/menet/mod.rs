//! MENet configuration, `w-MENet-k×α` notation and network assembly.

mod config;
mod network;

pub use config::{format_notation, parse_notation, DensePointwise, MENetConfig, Notation};
pub use network::{build_menet, Network, Summary, SummaryRow};

use serde::Serialize;

use crate::error::Result;
use crate::layers::{ActivationKind, ConvSpec, PoolKind};
use crate::menet::Network;
use crate::tensor::{CombineMode, Shape4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case")]
pub enum OpKind {
    Conv(ConvSpec),
    Linear { in_features: usize, out_features: usize },
    BatchNorm,
    Activation(ActivationKind),
    Shuffle { groups: usize },
    Pool(PoolKind),
    Combine(CombineMode),
    Add,
    Concat,
}

/// One executed layer with its input/output shapes and parameter count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub op: OpKind,
    pub input: Shape4,
    pub output: Shape4,
    pub params: usize,
}

/// Which layer kinds contribute multiply-accumulates, and how MACs convert
/// to FLOPs. The default counts convolutions and fully-connected layers
/// only, one FLOP per MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostPolicy {
    pub conv: bool,
    pub linear: bool,
    pub batchnorm: bool,
    pub elementwise: bool,
    pub pooling: bool,
    pub flops_per_mac: u64,
}

impl Default for CostPolicy {
    fn default() -> Self {
        CostPolicy {
            conv: true,
            linear: true,
            batchnorm: false,
            elementwise: false,
            pooling: false,
            flops_per_mac: 1,
        }
    }
}

impl CostPolicy {
    pub fn all_ops() -> Self {
        CostPolicy {
            batchnorm: true,
            elementwise: true,
            pooling: true,
            ..Self::default()
        }
    }

    pub fn tag(&self) -> String {
        let mut kinds = Vec::new();
        for (on, name) in [
            (self.conv, "conv"),
            (self.linear, "fc"),
            (self.batchnorm, "bn"),
            (self.elementwise, "elementwise"),
            (self.pooling, "pool"),
        ] {
            if on {
                kinds.push(name);
            }
        }
        format!("macs[{}] x{} flop/mac", kinds.join("+"), self.flops_per_mac)
    }

    /// MACs this policy charges for one layer.
    pub fn macs(&self, info: &LayerInfo) -> u64 {
        let out = info.output.numel() as u64;
        match info.op {
            OpKind::Conv(spec) if self.conv => spec.macs(info.input),
            OpKind::Linear {
                in_features,
                out_features,
            } if self.linear => (info.input.n * in_features * out_features) as u64,
            OpKind::BatchNorm if self.batchnorm => out,
            OpKind::Activation(_) | OpKind::Combine(_) | OpKind::Add if self.elementwise => out,
            OpKind::Pool(PoolKind::GlobalAvg) if self.pooling => info.input.numel() as u64,
            OpKind::Pool(_) if self.pooling => out * 9,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEntry {
    pub name: String,
    pub output: Shape4,
    pub macs: u64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub policy: CostPolicy,
    pub policy_tag: String,
    pub entries: Vec<CostEntry>,
    pub total_macs: u64,
    pub total_params: usize,
}

impl CostReport {
    pub fn total_flops(&self) -> u64 {
        self.total_macs * self.policy.flops_per_mac
    }
}

pub fn cost_of_layers(layers: &[LayerInfo], policy: CostPolicy) -> CostReport {
    let entries: Vec<CostEntry> = layers
        .iter()
        .map(|l| CostEntry {
            name: l.name.clone(),
            output: l.output,
            macs: policy.macs(l),
            params: l.params,
        })
        .collect();
    CostReport {
        policy,
        policy_tag: policy.tag(),
        total_macs: entries.iter().map(|e| e.macs).sum(),
        total_params: entries.iter().map(|e| e.params).sum(),
        entries,
    }
}

pub fn count_cost(net: &Network, input: Shape4) -> Result<CostReport> {
    count_cost_with(net, input, CostPolicy::default())
}

pub fn count_cost_with(net: &Network, input: Shape4, policy: CostPolicy) -> Result<CostReport> {
    Ok(cost_of_layers(&net.describe(input)?, policy))
}

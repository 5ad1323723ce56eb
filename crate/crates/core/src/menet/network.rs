use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MENetConfig;
use crate::analysis::{cost_of_layers, CostPolicy, LayerInfo, OpKind};
use crate::error::{Error, Result};
use crate::layers::{
    join, Activation, ActivationKind, BatchNorm, BnMode, Conv2d, ConvSpec, Layer, Linear, Param, Pool, PoolKind,
};
use crate::me::MEModule;
use crate::tensor::{Shape4, Tensor};

/// Stem, ME stages and classifier. The forward output is the logits tensor
/// `n × classes × 1 × 1`; softmax is left to the loss.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: MENetConfig,
    pub stem_conv: Conv2d,
    pub stem_bn: BatchNorm,
    pub stem_relu: Activation,
    pub stem_pool: Option<Pool>,
    pub stages: Vec<Vec<MEModule>>,
    pub head_pool: Pool,
    pub fc: Linear,
}

/// Builds a network with deterministic initialization from `seed`.
pub fn build_menet(config: &MENetConfig, seed: u64) -> Result<Network> {
    let modules = config.module_configs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem_conv = Conv2d::new(
        ConvSpec::conv3x3(config.input_channels, config.stem_channels, 2)?,
        &mut rng,
    )?;
    let mut stages: Vec<Vec<MEModule>> = vec![Vec::new(); config.stage_repeats.len()];
    let mut last = config.stem_channels;
    for (stage, index, cfg) in modules {
        let m = MEModule::new(cfg, &mut rng).map_err(|e| Error::InNetwork {
            stage: stage + 2,
            index,
            source: Box::new(e),
        })?;
        last = cfg.out_channels;
        stages[stage].push(m);
    }
    Ok(Network {
        config: config.clone(),
        stem_conv,
        stem_bn: BatchNorm::new(config.stem_channels)?,
        stem_relu: Activation::relu(),
        stem_pool: config.stem_pool.then(|| Pool::new(PoolKind::Max3x3s2)),
        stages,
        head_pool: Pool::new(PoolKind::GlobalAvg),
        fc: Linear::new(last, config.num_classes, &mut rng)?,
    })
}

impl Network {
    pub fn input_shape(&self, batch: usize) -> Result<Shape4> {
        Shape4::new(
            batch,
            self.config.input_channels,
            self.config.input_size,
            self.config.input_size,
        )
    }

    pub fn modules(&self) -> impl Iterator<Item = &MEModule> {
        self.stages.iter().flatten()
    }

    pub fn modules_mut(&mut self) -> impl Iterator<Item = &mut MEModule> {
        self.stages.iter_mut().flatten()
    }

    pub fn set_training(&mut self, training: bool) {
        self.set_bn_mode(if training { BnMode::Train } else { BnMode::Eval });
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.len());
        n
    }

    /// Layer records in execution order, shapes propagated from `input`.
    pub fn describe(&self, input: Shape4) -> Result<Vec<LayerInfo>> {
        if input.c != self.config.input_channels {
            return Err(Error::InvalidShape(format!(
                "network expects {} input channels, got {input}",
                self.config.input_channels
            )));
        }
        let mut rows = Vec::new();
        let spec = self.stem_conv.spec;
        let mut s = spec.output_shape(input)?;
        rows.push(LayerInfo {
            name: "stage1.conv".into(),
            op: OpKind::Conv(spec),
            input,
            output: s,
            params: spec.param_count(),
        });
        rows.push(LayerInfo {
            name: "stage1.bn".into(),
            op: OpKind::BatchNorm,
            input: s,
            output: s,
            params: 2 * s.c,
        });
        rows.push(LayerInfo {
            name: "stage1.relu".into(),
            op: OpKind::Activation(ActivationKind::Relu),
            input: s,
            output: s,
            params: 0,
        });
        if self.stem_pool.is_some() {
            let o = PoolKind::Max3x3s2.output_shape(s);
            rows.push(LayerInfo {
                name: "stage1.pool".into(),
                op: OpKind::Pool(PoolKind::Max3x3s2),
                input: s,
                output: o,
                params: 0,
            });
            s = o;
        }
        for (si, stage) in self.stages.iter().enumerate() {
            for (mi, m) in stage.iter().enumerate() {
                s = m.describe(s, &format!("stage{}.{}", si + 2, mi), &mut rows)?;
            }
        }
        let pooled = PoolKind::GlobalAvg.output_shape(s);
        rows.push(LayerInfo {
            name: "classifier.pool".into(),
            op: OpKind::Pool(PoolKind::GlobalAvg),
            input: s,
            output: pooled,
            params: 0,
        });
        let (inf, outf) = (self.fc.in_features(), self.fc.out_features());
        if pooled.c != inf {
            return Err(Error::InvalidShape(format!(
                "classifier expects {inf} features, got {pooled}"
            )));
        }
        rows.push(LayerInfo {
            name: "classifier.fc".into(),
            op: OpKind::Linear {
                in_features: inf,
                out_features: outf,
            },
            input: pooled,
            output: pooled.with_channels(outf)?,
            params: inf * outf + outf,
        });
        Ok(rows)
    }

    /// One row per layer with the default cost policy; totals agree with
    /// [`crate::analysis::count_cost`].
    pub fn summarize(&self, input: Shape4) -> Result<Summary> {
        let report = cost_of_layers(&self.describe(input)?, CostPolicy::default());
        Ok(Summary {
            rows: report
                .entries
                .iter()
                .map(|e| SummaryRow {
                    name: e.name.clone(),
                    output: e.output,
                    params: e.params,
                    macs: e.macs,
                })
                .collect(),
            total_params: report.total_params,
            total_macs: report.total_macs,
        })
    }
}

impl Layer for Network {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut t = self.stem_conv.forward(x)?;
        t = self.stem_bn.forward(&t)?;
        t = self.stem_relu.forward(&t)?;
        if let Some(p) = self.stem_pool.as_mut() {
            t = p.forward(&t)?;
        }
        for m in self.modules_mut() {
            t = m.forward(&t)?;
        }
        t = self.head_pool.forward(&t)?;
        self.fc.forward(&t)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = self.fc.backward(grad_out)?;
        g = self.head_pool.backward(&g)?;
        for m in self.stages.iter_mut().rev().flat_map(|s| s.iter_mut().rev()) {
            g = m.backward(&g)?;
        }
        if let Some(p) = self.stem_pool.as_mut() {
            g = p.backward(&g)?;
        }
        g = self.stem_relu.backward(&g)?;
        g = self.stem_bn.backward(&g)?;
        self.stem_conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.stem_conv.visit_params(&join(prefix, "stage1.conv"), f);
        self.stem_bn.visit_params(&join(prefix, "stage1.bn"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (mi, m) in stage.iter_mut().enumerate() {
                m.visit_params(&join(prefix, &format!("stage{}.{}", si + 2, mi)), f);
            }
        }
        self.fc.visit_params(&join(prefix, "classifier.fc"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.stem_bn.visit_buffers(&join(prefix, "stage1.bn"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (mi, m) in stage.iter_mut().enumerate() {
                m.visit_buffers(&join(prefix, &format!("stage{}.{}", si + 2, mi)), f);
            }
        }
    }

    fn set_bn_mode(&mut self, mode: BnMode) {
        self.stem_bn.set_bn_mode(mode);
        for m in self.modules_mut() {
            m.set_bn_mode(mode);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub output: Shape4,
    pub params: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub total_params: usize,
    pub total_macs: u64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        writeln!(
            f,
            "{:<width$}  {:>18}  {:>10}  {:>14}",
            "layer", "output", "params", "MACs"
        )?;
        for r in &self.rows {
            let shape = format!("{}x{}x{}", r.output.c, r.output.h, r.output.w);
            writeln!(f, "{:<width$}  {:>18}  {:>10}  {:>14}", r.name, shape, r.params, r.macs)?;
        }
        writeln!(
            f,
            "{:<width$}  {:>18}  {:>10}  {:>14}",
            "total", "", self.total_params, self.total_macs
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::count_cost;

    fn stage_outputs(net: &Network, input: Shape4) -> Vec<(String, usize, usize)> {
        net.describe(input)
            .unwrap()
            .into_iter()
            .filter(|r| {
                r.name.ends_with("out_relu") || r.name.starts_with("stage1") || r.name.starts_with("classifier")
            })
            .map(|r| (r.name, r.output.c, r.output.h))
            .collect()
    }

    #[test]
    fn reference_spatial_trace() {
        let net = build_menet(&MENetConfig::new(228, 12, 1.0, 3), 0).unwrap();
        let rows = stage_outputs(&net, net.input_shape(1).unwrap());
        let find = |name: &str| rows.iter().find(|r| r.0 == name).unwrap().clone();
        assert_eq!(find("stage1.conv").2, 112);
        assert_eq!(find("stage1.pool").2, 56);
        assert_eq!(find("stage2.3.out_relu"), ("stage2.3.out_relu".into(), 228, 28));
        assert_eq!(find("stage3.7.out_relu"), ("stage3.7.out_relu".into(), 456, 14));
        assert_eq!(find("stage4.3.out_relu"), ("stage4.3.out_relu".into(), 912, 7));
        assert_eq!(find("classifier.fc"), ("classifier.fc".into(), 1000, 1));
    }

    #[test]
    fn summary_totals_match_cost() {
        let net = build_menet(&MENetConfig::new(256, 12, 1.0, 4), 0).unwrap();
        let input = net.input_shape(1).unwrap();
        let summary = net.summarize(input).unwrap();
        let cost = count_cost(&net, input).unwrap();
        assert_eq!(summary.total_macs, cost.total_macs);
        assert_eq!(summary.total_params, cost.total_params);
        assert_eq!(summary.rows.iter().map(|r| r.macs).sum::<u64>(), summary.total_macs);
        assert!(summary.to_string().lines().count() == summary.rows.len() + 2);
    }

    #[test]
    fn described_params_match_parameters() {
        let mut net = build_menet(&MENetConfig::new(228, 12, 1.0, 3), 0).unwrap();
        let described: usize = net
            .describe(net.input_shape(1).unwrap())
            .unwrap()
            .iter()
            .map(|r| r.params)
            .sum();
        assert_eq!(described, net.param_count());
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = MENetConfig {
            stage_repeats: vec![1, 1, 1],
            ..MENetConfig::new(24, 4, 1.0, 2)
        };
        let cfg = MENetConfig {
            stem_channels: 8,
            ..cfg
        };
        let collect = |seed| {
            let mut net = build_menet(&cfg, seed).unwrap();
            let mut v = Vec::new();
            net.visit_params("", &mut |n, p| v.push((n, p.value.clone())));
            v
        };
        assert_eq!(collect(5), collect(5));
        assert_ne!(collect(5), collect(6));
    }

    #[test]
    fn desk_scale_forward() {
        let cfg = MENetConfig {
            stage_repeats: vec![1, 2, 1],
            input_size: 32,
            stem_pool: false,
            num_classes: 10,
            stem_channels: 8,
            ..MENetConfig::new(24, 4, 1.0, 2)
        };
        let mut net = build_menet(&cfg, 1).unwrap();
        let x = Tensor::zeros(net.input_shape(2).unwrap());
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape4::new(2, 10, 1, 1).unwrap());
        let trace = stage_outputs(&net, net.input_shape(1).unwrap());
        assert_eq!(trace.iter().find(|r| r.0 == "stage4.0.out_relu").unwrap().2, 2);
    }
}

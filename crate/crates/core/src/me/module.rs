use rand::Rng;

use super::{EvolutionOp, MEModuleConfig, MergingOp};
use crate::analysis::{LayerInfo, OpKind};
use crate::error::{Error, Result};
use crate::layers::{
    join, Activation, ActivationKind, BatchNorm, BnMode, ChannelShuffle, Conv2d, ConvSpec, Layer, Param, Pool, PoolKind,
};
use crate::tensor::{concat_channels, elementwise_combine, slice_channels, CombineMode, Shape4, Tensor};

/// Controls the fusion branch output. `Constant` replaces it with a fixed
/// value, `Disabled` drops the combine so the depthwise output feeds the
/// second pointwise convolution directly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FusionHook {
    #[default]
    Enabled,
    Disabled,
    Constant(f64),
}

#[derive(Debug, Clone)]
struct PathCache {
    depthwise: Tensor,
    fusion: Option<Tensor>,
}

/// ME module: identity branch, residual bottleneck branch and fusion branch.
///
/// Residual branch: pointwise (group) conv, BN, ReLU, channel shuffle,
/// 3×3 depthwise conv, BN, combine with the fusion output, pointwise group
/// conv, BN. The fusion branch taps the shuffled bottleneck map. Standard
/// modules add the identity and apply ReLU; downsampling modules average-pool
/// the identity (3×3, stride 2), concatenate it ahead of the residual output
/// and apply ReLU.
#[derive(Debug, Clone)]
pub struct MEModule {
    pub cfg: MEModuleConfig,
    pub pw1: Conv2d,
    pub bn1: BatchNorm,
    pub relu1: Activation,
    pub shuffle: ChannelShuffle,
    pub merging: MergingOp,
    pub evolution: EvolutionOp,
    pub dw: Conv2d,
    pub bn2: BatchNorm,
    pub pw2: Conv2d,
    pub bn3: BatchNorm,
    pub skip_pool: Option<Pool>,
    pub out_relu: Activation,
    pub fusion: FusionHook,
    cache: Option<PathCache>,
}

impl MEModule {
    pub fn new<R: Rng + ?Sized>(cfg: MEModuleConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let b = cfg.bottleneck_channels;
        let stride = if cfg.downsample { 2 } else { 1 };
        Ok(MEModule {
            cfg,
            pw1: Conv2d::new(
                ConvSpec::pointwise(cfg.in_channels, b, cfg.first_pointwise_groups())?,
                rng,
            )?,
            bn1: BatchNorm::new(b)?,
            relu1: Activation::relu(),
            shuffle: ChannelShuffle::new(cfg.groups),
            merging: MergingOp::new(b, cfg.fusion_channels, rng)?,
            evolution: EvolutionOp::new(cfg.fusion_channels, b, stride, cfg.combine_mode, rng)?,
            dw: Conv2d::new(ConvSpec::depthwise3x3(b, stride)?, rng)?,
            bn2: BatchNorm::new(b)?,
            pw2: Conv2d::new(ConvSpec::pointwise(b, cfg.residual_channels(), cfg.groups)?, rng)?,
            bn3: BatchNorm::new(cfg.residual_channels())?,
            skip_pool: cfg.downsample.then(|| Pool::new(PoolKind::Avg3x3s2)),
            out_relu: Activation::relu(),
            fusion: FusionHook::Enabled,
            cache: None,
        })
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.cfg.in_channels {
            return Err(Error::InvalidShape(format!(
                "ME module expects {} channels, got {input}",
                self.cfg.in_channels
            )));
        }
        let s = self
            .dw
            .spec
            .output_shape(input.with_channels(self.cfg.bottleneck_channels)?)?;
        s.with_channels(self.cfg.out_channels)
    }

    /// Shuffle, depthwise conv + BN and the fusion combine, applied to the
    /// post-ReLU bottleneck map. Returns the input of the second pointwise
    /// convolution.
    pub fn bottleneck_path_forward(&mut self, bottleneck: &Tensor) -> Result<Tensor> {
        let s = self.shuffle.forward(bottleneck)?;
        let d = self.dw.forward(&s)?;
        let d = self.bn2.forward(&d)?;
        let fusion = match self.fusion {
            FusionHook::Disabled => None,
            FusionHook::Constant(v) => Some(Tensor::full(d.shape(), v)),
            FusionHook::Enabled => {
                let z = self.merging.forward(&s)?;
                Some(self.evolution.forward(&z)?)
            }
        };
        let out = match &fusion {
            Some(e) => elementwise_combine(&d, e, self.cfg.combine_mode)?,
            None => d.clone(),
        };
        self.cache = Some(PathCache { depthwise: d, fusion });
        Ok(out)
    }

    pub fn bottleneck_path_backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::MissingForwardCache("ME module"))?;
        let (grad_d, grad_e) = match (&cache.fusion, self.cfg.combine_mode) {
            (None, _) => (grad.clone(), None),
            (Some(e), CombineMode::Product) => (
                grad.zip_map(e, "combine backward", |g, e| g * e)?,
                Some(grad.zip_map(&cache.depthwise, "combine backward", |g, d| g * d)?),
            ),
            (Some(_), CombineMode::Addition) => (grad.clone(), Some(grad.clone())),
        };
        let g = self.bn2.backward(&grad_d)?;
        let mut grad_s = self.dw.backward(&g)?;
        if let (Some(ge), FusionHook::Enabled) = (grad_e, self.fusion) {
            let gz = self.evolution.backward(&ge)?;
            grad_s.add_assign(&self.merging.backward(&gz)?)?;
        }
        self.shuffle.backward(&grad_s)
    }

    /// Per-layer records for cost accounting, in execution order.
    pub fn describe(&self, input: Shape4, prefix: &str, rows: &mut Vec<LayerInfo>) -> Result<Shape4> {
        let out = self.output_shape(input)?;
        let mut push = |name: &str, op: OpKind, i: Shape4, o: Shape4, params: usize| {
            rows.push(LayerInfo {
                name: join(prefix, name),
                op,
                input: i,
                output: o,
                params,
            })
        };
        let b = self.cfg.bottleneck_channels;
        let k = self.cfg.fusion_channels;
        let conv = |c: &Conv2d| OpKind::Conv(c.spec);
        let bn_params = |c: usize| 2 * c;
        let bshape = input.with_channels(b)?;
        let dshape = out.with_channels(b)?;
        let fshape = input.with_channels(k)?;
        let feshape = out.with_channels(k)?;
        let residual = out.with_channels(self.cfg.residual_channels())?;

        push("pw1", conv(&self.pw1), input, bshape, self.pw1.spec.param_count());
        push("bn1", OpKind::BatchNorm, bshape, bshape, bn_params(b));
        push("relu1", OpKind::Activation(ActivationKind::Relu), bshape, bshape, 0);
        push(
            "shuffle",
            OpKind::Shuffle {
                groups: self.cfg.groups,
            },
            bshape,
            bshape,
            0,
        );
        if self.fusion == FusionHook::Enabled {
            let ev = &self.evolution;
            push(
                "merge.conv",
                conv(&self.merging.conv),
                bshape,
                fshape,
                self.merging.conv.spec.param_count(),
            );
            push("merge.bn", OpKind::BatchNorm, fshape, fshape, bn_params(k));
            push(
                "merge.relu",
                OpKind::Activation(ActivationKind::Relu),
                fshape,
                fshape,
                0,
            );
            push(
                "evolve.evolve",
                conv(&ev.evolve),
                fshape,
                feshape,
                ev.evolve.spec.param_count(),
            );
            push("evolve.evolve_bn", OpKind::BatchNorm, feshape, feshape, bn_params(k));
            push(
                "evolve.evolve_relu",
                OpKind::Activation(ActivationKind::Relu),
                feshape,
                feshape,
                0,
            );
            push(
                "evolve.matching",
                conv(&ev.matching),
                feshape,
                dshape,
                ev.matching.spec.param_count(),
            );
            push("evolve.matching_bn", OpKind::BatchNorm, dshape, dshape, bn_params(b));
            if let Some(g) = &ev.gate {
                push("evolve.gate", OpKind::Activation(g.kind), dshape, dshape, 0);
            }
        }
        push("dw", conv(&self.dw), bshape, dshape, self.dw.spec.param_count());
        push("bn2", OpKind::BatchNorm, dshape, dshape, bn_params(b));
        if self.fusion != FusionHook::Disabled {
            push("combine", OpKind::Combine(self.cfg.combine_mode), dshape, dshape, 0);
        }
        push("pw2", conv(&self.pw2), dshape, residual, self.pw2.spec.param_count());
        push("bn3", OpKind::BatchNorm, residual, residual, bn_params(residual.c));
        if self.cfg.downsample {
            let pooled = out.with_channels(input.c)?;
            push("skip_pool", OpKind::Pool(PoolKind::Avg3x3s2), input, pooled, 0);
            push("concat", OpKind::Concat, residual, out, 0);
        } else {
            push("add", OpKind::Add, out, out, 0);
        }
        push("out_relu", OpKind::Activation(ActivationKind::Relu), out, out, 0);
        Ok(out)
    }
}

impl Layer for MEModule {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        let a = self.pw1.forward(x)?;
        let a = self.bn1.forward(&a)?;
        let a = self.relu1.forward(&a)?;
        let c = self.bottleneck_path_forward(&a)?;
        let r = self.pw2.forward(&c)?;
        let r = self.bn3.forward(&r)?;
        let pre = match self.skip_pool.as_mut() {
            Some(pool) => concat_channels(&pool.forward(x)?, &r)?,
            None => x.zip_map(&r, "ME residual add", |a, b| a + b)?,
        };
        self.out_relu.forward(&pre)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.out_relu.backward(grad_out)?;
        let (grad_skip, grad_res) = match self.skip_pool.as_mut() {
            Some(pool) => {
                let cin = self.cfg.in_channels;
                let gs = slice_channels(&g, 0, cin)?;
                let gr = slice_channels(&g, cin, self.cfg.out_channels)?;
                (pool.backward(&gs)?, gr)
            }
            None => (g.clone(), g),
        };
        let gr = self.bn3.backward(&grad_res)?;
        let gc = self.pw2.backward(&gr)?;
        let ga = self.bottleneck_path_backward(&gc)?;
        let ga = self.relu1.backward(&ga)?;
        let ga = self.bn1.backward(&ga)?;
        let mut gx = self.pw1.backward(&ga)?;
        gx.add_assign(&grad_skip)?;
        Ok(gx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.pw1.visit_params(&join(prefix, "pw1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.merging.visit_params(&join(prefix, "merge"), f);
        self.evolution.visit_params(&join(prefix, "evolve"), f);
        self.dw.visit_params(&join(prefix, "dw"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.pw2.visit_params(&join(prefix, "pw2"), f);
        self.bn3.visit_params(&join(prefix, "bn3"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.merging.visit_buffers(&join(prefix, "merge"), f);
        self.evolution.visit_buffers(&join(prefix, "evolve"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
        self.bn3.visit_buffers(&join(prefix, "bn3"), f);
    }

    fn set_bn_mode(&mut self, mode: BnMode) {
        self.bn1.set_bn_mode(mode);
        self.merging.set_bn_mode(mode);
        self.evolution.set_bn_mode(mode);
        self.bn2.set_bn_mode(mode);
        self.bn3.set_bn_mode(mode);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(n, c, h, w).unwrap()
    }

    #[test]
    fn standard_module_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut m = MEModule::new(MEModuleConfig::standard(228, 12, 3), &mut rng).unwrap();
        let x = Tensor::randn(shape(1, 228, 28, 28), 1.0, &mut rng);
        m.set_bn_mode(BnMode::Eval);
        assert_eq!(m.forward(&x).unwrap().shape(), shape(1, 228, 28, 28));
    }

    #[test]
    fn downsampling_module_splits_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = MEModuleConfig::downsampling(24, 228, 12, 3).with_first_pointwise_grouped(false);
        let mut m = MEModule::new(cfg, &mut rng).unwrap();
        assert_eq!(m.pw2.spec.out_channels, 204);
        let x = Tensor::uniform(shape(2, 24, 14, 14), 0.0, 1.0, &mut rng);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), shape(2, 228, 7, 7));
        // identity branch: ReLU of avg-pooled nonnegative input
        let pooled = crate::layers::pool(&x, PoolKind::Avg3x3s2);
        assert_eq!(slice_channels(&y, 0, 24).unwrap(), pooled);
    }

    #[test]
    fn odd_spatial_downsampling_rounds_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut m = MEModule::new(MEModuleConfig::downsampling(8, 16, 2, 2), &mut rng).unwrap();
        let x = Tensor::randn(shape(2, 8, 7, 5), 1.0, &mut rng);
        assert_eq!(m.forward(&x).unwrap().shape(), shape(2, 16, 4, 3));
    }

    #[test]
    fn gate_of_ones_matches_disabled_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let cfg = MEModuleConfig::standard(16, 2, 2);
        let mut m = MEModule::new(cfg, &mut rng).unwrap();
        let x = Tensor::randn(shape(2, 16, 5, 5), 1.0, &mut rng);
        m.fusion = FusionHook::Constant(1.0);
        let gated = m.forward(&x).unwrap();
        m.fusion = FusionHook::Disabled;
        assert_eq!(gated, m.forward(&x).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let cfg = MEModuleConfig::standard(16, 2, 2).with_combine(CombineMode::Addition);
        let mut m = MEModule::new(cfg, &mut rng).unwrap();
        let x = Tensor::randn(shape(2, 16, 5, 5), 1.0, &mut rng);
        m.fusion = FusionHook::Constant(0.0);
        let added = m.forward(&x).unwrap();
        m.fusion = FusionHook::Disabled;
        assert_eq!(added, m.forward(&x).unwrap());
    }

    #[test]
    fn gate_bounds_combined_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut m = MEModule::new(MEModuleConfig::standard(16, 2, 2), &mut rng).unwrap();
        let a = Tensor::randn(shape(2, 4, 6, 6), 1.0, &mut rng);
        let combined = m.bottleneck_path_forward(&a).unwrap();
        let d = m.cache.as_ref().unwrap().depthwise.clone();
        for (c, d) in combined.data().iter().zip(d.data()) {
            assert!(c.abs() <= d.abs());
        }
    }

    #[test]
    fn combine_gradient_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let a = Tensor::randn(shape(2, 2, 4, 4), 1.0, &mut rng);
        let g = Tensor::randn(shape(2, 2, 4, 4), 1.0, &mut rng);
        let path_grad = |m: &mut MEModule, hook: FusionHook| {
            m.fusion = hook;
            m.bottleneck_path_forward(&a).unwrap();
            m.bottleneck_path_backward(&g).unwrap()
        };

        // sum rule: the depthwise side sees grad_out untouched
        let cfg = MEModuleConfig::standard(8, 2, 2).with_combine(CombineMode::Addition);
        let mut m = MEModule::new(cfg, &mut rng).unwrap();
        m.set_bn_mode(BnMode::Eval);
        assert_eq!(
            path_grad(&mut m, FusionHook::Constant(3.0)),
            path_grad(&mut m, FusionHook::Disabled)
        );

        // product rule: the depthwise side sees grad_out * gate
        let mut m = MEModule::new(MEModuleConfig::standard(8, 2, 2), &mut rng).unwrap();
        m.set_bn_mode(BnMode::Eval);
        let half = path_grad(&mut m, FusionHook::Constant(0.5));
        let full = path_grad(&mut m, FusionHook::Disabled);
        assert_eq!(half, full.map(|v| v * 0.5));
    }

    #[test]
    fn skip_gradient_reaches_input() {
        // With the residual branch zeroed out, the standard module is relu(x).
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let mut m = MEModule::new(MEModuleConfig::standard(8, 2, 2), &mut rng).unwrap();
        m.pw2.weight.value.fill(0.0);
        m.set_bn_mode(BnMode::Eval);
        let x = Tensor::uniform(shape(1, 8, 3, 3), 0.5, 1.0, &mut rng);
        let y = m.forward(&x).unwrap();
        assert_eq!(y, x);
        let g = Tensor::randn(x.shape(), 1.0, &mut rng);
        let gx = m.backward(&g).unwrap();
        // pw2 weights are zero, so no gradient flows into the residual input
        assert_eq!(gx, g);
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let mut m = MEModule::new(MEModuleConfig::standard(8, 2, 2), &mut rng).unwrap();
        let g = Tensor::zeros(shape(1, 8, 2, 2));
        assert!(m.backward(&g).is_err());
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut m = MEModule::new(MEModuleConfig::standard(8, 2, 2), &mut rng).unwrap();
        assert!(m.forward(&Tensor::zeros(shape(1, 12, 2, 2))).is_err());
    }
}

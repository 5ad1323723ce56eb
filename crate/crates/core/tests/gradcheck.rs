use menet_core::layers::{Activation, BatchNorm, ChannelShuffle, Conv2d, ConvSpec, Layer, Linear, Pool, PoolKind};
use menet_core::me::{EvolutionOp, MEModule, MEModuleConfig, MergingOp};
use menet_core::menet::{build_menet, MENetConfig};
use menet_core::tensor::{CombineMode, Shape4, Tensor};
use menet_core::training::{cross_entropy, gradcheck, projection_objective, GradcheckReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;

fn check(layer: &mut dyn Layer, x: &Tensor, seed: u64) -> GradcheckReport {
    let out = layer.forward(x).unwrap().shape();
    gradcheck(layer, x, projection_objective(out, seed)).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng, c: usize) -> Tensor {
    let n = rng.gen_range(1..=2);
    let h = rng.gen_range(3..=6);
    let w = rng.gen_range(3..=6);
    Tensor::randn(Shape4::new(n, c, h, w).unwrap(), 1.0, rng)
}

/// Every value meets the relative tolerance, sits at the
/// finite-difference roundoff floor, or straddles a ReLU kink.
fn assert_explained(kind: &str, seed: u64, r: &GradcheckReport, tol: f64) {
    let bad = r.unexplained(tol, 1e-7, 1e-3);
    assert!(bad.is_empty(), "{kind} seed {seed}: {bad:?}");
}

#[test]
fn every_layer_kind() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = [1, 2, 4][rng.gen_range(0..3)];
        let cin = g * rng.gen_range(1..=2);
        let cout = g * rng.gen_range(1..=2);
        let stride = rng.gen_range(1..=2);
        let x = random_input(&mut rng, cin);
        let mut layers: Vec<(&str, Box<dyn Layer>)> = vec![
            (
                "pointwise",
                Box::new(Conv2d::new(ConvSpec::pointwise(cin, cout, g).unwrap(), &mut rng).unwrap()),
            ),
            (
                "conv3x3",
                Box::new(Conv2d::new(ConvSpec::conv3x3(cin, cout, stride).unwrap(), &mut rng).unwrap()),
            ),
            (
                "depthwise",
                Box::new(Conv2d::new(ConvSpec::depthwise3x3(cin, stride).unwrap(), &mut rng).unwrap()),
            ),
            ("relu", Box::new(Activation::relu())),
            ("sigmoid", Box::new(Activation::sigmoid())),
            ("maxpool", Box::new(Pool::new(PoolKind::Max3x3s2))),
            ("avgpool", Box::new(Pool::new(PoolKind::Avg3x3s2))),
            ("gap", Box::new(Pool::new(PoolKind::GlobalAvg))),
            ("shuffle", Box::new(ChannelShuffle::new(g))),
        ];
        if x.shape().n * x.shape().h * x.shape().w >= 2 {
            layers.push(("batchnorm", Box::new(BatchNorm::new(cin).unwrap())));
        }
        for (kind, layer) in layers.iter_mut() {
            assert_explained(kind, seed, &check(layer.as_mut(), &x, seed), 1e-5);
        }
        let v = Tensor::randn(Shape4::new(2, cin, 1, 1).unwrap(), 1.0, &mut rng);
        let mut fc = Linear::new(cin, 3, &mut rng).unwrap();
        assert_explained("linear", seed, &check(&mut fc, &v, seed), 1e-5);
    }
}

#[test]
fn merging_and_evolution() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let cin = rng.gen_range(1..=4);
        let x = random_input(&mut rng, cin);
        let mut merge = MergingOp::new(cin, 1.max(cin / 2), &mut rng).unwrap();
        assert_explained("merging", seed, &check(&mut merge, &x, seed), 1e-5);
        for mode in [CombineMode::Product, CombineMode::Addition] {
            let mut evo = EvolutionOp::new(2, 4, 1 + (seed as usize % 2), mode, &mut rng).unwrap();
            let z = random_input(&mut rng, 2);
            assert_explained("evolution", seed, &check(&mut evo, &z, seed), 1e-5);
        }
    }
}

#[test]
fn me_module_variants() {
    let variants = [
        ("standard product", MEModuleConfig::standard(8, 2, 2)),
        (
            "standard addition",
            MEModuleConfig::standard(8, 2, 2).with_combine(CombineMode::Addition),
        ),
        ("downsampling product", MEModuleConfig::downsampling(4, 8, 2, 2)),
        (
            "downsampling addition",
            MEModuleConfig::downsampling(4, 8, 2, 2).with_combine(CombineMode::Addition),
        ),
        (
            "dense first pointwise",
            MEModuleConfig::downsampling(2, 8, 2, 2).with_first_pointwise_grouped(false),
        ),
    ];
    for (kind, cfg) in variants {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut m = MEModule::new(cfg, &mut rng).unwrap();
            let x = Tensor::randn(Shape4::new(2, cfg.in_channels, 4, 4).unwrap(), 1.0, &mut rng);
            assert_explained(kind, seed, &check(&mut m, &x, seed), 1e-4);
        }
    }
}

#[test]
fn whole_tiny_network_with_cross_entropy() {
    let cfg = MENetConfig {
        stage_repeats: vec![1, 1, 1],
        input_size: 8,
        stem_channels: 8,
        stem_pool: false,
        num_classes: 2,
        ..MENetConfig::new(24, 4, 1.0, 2)
    };
    for seed in 0..3 {
        let mut net = build_menet(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(net.input_shape(4).unwrap(), 1.0, &mut rng);
        let labels = vec![0, 1, 1, 0];
        let r = gradcheck(&mut net, &x, |y: &Tensor| cross_entropy(y, &labels)).unwrap();
        assert_explained("network", seed, &r, 1e-4);
    }
}

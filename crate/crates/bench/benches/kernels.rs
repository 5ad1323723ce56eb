use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use menet_core::analysis::count_cost;
use menet_core::layers::{channel_shuffle, conv2d_backward, conv2d_forward, ConvSpec, Layer};
use menet_core::me::{MEModule, MEModuleConfig};
use menet_core::menet::{build_menet, MENetConfig};
use menet_core::tensor::{Shape4, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let specs = [
        ("pointwise_g1", ConvSpec::pointwise(64, 64, 1).unwrap()),
        ("pointwise_g4", ConvSpec::pointwise(64, 64, 4).unwrap()),
        ("depthwise_s1", ConvSpec::depthwise3x3(64, 1).unwrap()),
        ("depthwise_s2", ConvSpec::depthwise3x3(64, 2).unwrap()),
        ("dense3x3_s2", ConvSpec::conv3x3(16, 32, 2).unwrap()),
    ];
    let mut group = c.benchmark_group("conv");
    for (name, spec) in specs {
        let x = Tensor::randn(Shape4::new(4, spec.in_channels, 28, 28).unwrap(), 1.0, &mut rng);
        let w = Tensor::randn(spec.weight_shape(), 0.1, &mut rng);
        let y = conv2d_forward(&x, &spec, &w, None).unwrap();
        let gy = Tensor::randn(y.shape(), 1.0, &mut rng);
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| conv2d_forward(black_box(&x), &spec, &w, None).unwrap())
        });
        group.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| conv2d_backward(black_box(&x), &spec, &w, &gy).unwrap())
        });
    }
    group.finish();
}

fn shuffle(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(Shape4::new(4, 96, 28, 28).unwrap(), 1.0, &mut rng);
    c.bench_function("channel_shuffle_96x3", |b| {
        b.iter(|| channel_shuffle(black_box(&x), 3).unwrap())
    });
}

fn me_module(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("me_module");
    for (name, cfg) in [
        ("standard", MEModuleConfig::standard(48, 12, 3)),
        ("downsampling", MEModuleConfig::downsampling(24, 48, 12, 3)),
    ] {
        let mut m = MEModule::new(cfg, &mut rng).unwrap();
        let x = Tensor::randn(Shape4::new(4, cfg.in_channels, 14, 14).unwrap(), 1.0, &mut rng);
        let y = m.forward(&x).unwrap();
        let gy = Tensor::randn(y.shape(), 1.0, &mut rng);
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| m.forward(black_box(&x)).unwrap())
        });
        group.bench_function(BenchmarkId::new("forward_backward", name), |b| {
            b.iter(|| {
                m.forward(black_box(&x)).unwrap();
                m.backward(&gy).unwrap()
            })
        });
    }
    group.finish();
}

fn cost_counting(c: &mut Criterion) {
    let net = build_menet(&MENetConfig::new(228, 12, 1.0, 3), 0).unwrap();
    let input = net.input_shape(1).unwrap();
    c.bench_function("count_cost_228", |b| {
        b.iter(|| count_cost(black_box(&net), input).unwrap())
    });
}

criterion_group!(benches, conv_kernels, shuffle, me_module, cost_counting);
criterion_main!(benches);

use menet_core::menet::{build_menet, MENetConfig};
use menet_core::training::{synthetic_separable, train_loop, EpochRecord, OptimState, Schedule, TrainOptions};

fn tiny() -> MENetConfig {
    MENetConfig {
        stage_repeats: vec![1, 1, 1],
        input_size: 8,
        stem_channels: 8,
        stem_pool: false,
        num_classes: 2,
        ..MENetConfig::new(24, 4, 1.0, 2)
    }
}

fn run(seed: u64) -> Vec<EpochRecord> {
    let data = synthetic_separable(128, 3, 8, 2, seed).unwrap();
    let mut net = build_menet(&tiny(), seed).unwrap();
    let mut opt = OptimState::imagenet(0.1).unwrap();
    let opts = TrainOptions {
        seed,
        ..TrainOptions::default()
    };
    train_loop(&mut net, &data, &Schedule::desk(), &mut opt, &opts).unwrap()
}

#[test]
fn tiny_network_fits_separable_data() {
    let history = run(7);
    for r in &history {
        println!("{} {} {:.6} {:.4}", r.epoch, r.lr, r.loss, r.accuracy);
    }
    assert_eq!(history.len(), 30);
    assert!(history.iter().any(|r| r.accuracy == 1.0));
    assert_eq!(history.last().unwrap().accuracy, 1.0);
}

#[test]
fn same_seed_same_history() {
    let a = run(11);
    let b = run(11);
    let bits = |h: &[EpochRecord]| {
        h.iter()
            .map(|r| (r.lr.to_bits(), r.loss.to_bits(), r.accuracy.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, sgd_step, Dataset, OptimState, Schedule};
use crate::error::{Error, Result};
use crate::layers::{BnMode, Layer};
use crate::menet::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Random left-right mirroring of training samples.
    pub flip: bool,
    pub seed: u64,
}

impl TrainOptions {
    /// Batch 256 for 120 epochs.
    pub fn imagenet() -> Self {
        TrainOptions {
            epochs: 120,
            batch_size: 256,
            ..Self::default()
        }
    }
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            batch_size: 32,
            flip: false,
            seed: 0,
        }
    }
}

/// Metrics after one epoch: the learning rate used, the mean training loss
/// over its steps and the eval-mode accuracy on the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

fn check_compatible(net: &Network, data: &Dataset) -> Result<()> {
    data.validate()?;
    let c = &net.config;
    if c.input_channels != data.channels || c.input_size != data.height || c.input_size != data.width {
        return Err(Error::InvalidShape(format!(
            "network expects {}x{}x{} inputs, dataset holds {}x{}x{}",
            c.input_channels, c.input_size, c.input_size, data.channels, data.height, data.width
        )));
    }
    if data.class_count > c.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the classifier has {}",
            data.class_count, c.num_classes
        )));
    }
    Ok(())
}

fn batches(count: usize, batch_size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..count)
        .step_by(batch_size.max(1))
        .map(move |s| s..(s + batch_size).min(count))
}

/// Mini-batch SGD. Shuffling and flips come from `opts.seed`, so repeated
/// runs from the same initial network produce identical histories. A final
/// batch of a single sample is dropped because batch statistics need two.
pub fn train_loop(
    net: &mut Network,
    data: &Dataset,
    sched: &Schedule,
    opt: &mut OptimState,
    opts: &TrainOptions,
) -> Result<Vec<EpochRecord>> {
    train_loop_with(net, data, sched, opt, opts, |_| {})
}

/// [`train_loop`] calling `on_epoch` as soon as each epoch's record exists.
pub fn train_loop_with(
    net: &mut Network,
    data: &Dataset,
    sched: &Schedule,
    opt: &mut OptimState,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    check_compatible(net, data)?;
    sched.validate()?;
    opt.validate()?;
    if opts.batch_size < 2 {
        return Err(Error::DegenerateBatch(opts.batch_size));
    }
    if opts.epochs > sched.total_epochs {
        return Err(Error::Config(format!(
            "{} epochs exceed the schedule's {}",
            opts.epochs, sched.total_epochs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.count).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        opt.lr = sched.lr_at(epoch)?;
        net.set_bn_mode(BnMode::Train);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for range in batches(data.count, opts.batch_size) {
            let idx = &order[range];
            if idx.len() < 2 {
                continue;
            }
            let flips: Vec<bool> = idx.iter().map(|_| opts.flip && rng.gen::<bool>()).collect();
            let (x, labels) = data.batch(idx, &flips)?;
            net.zero_grad();
            let logits = net.forward(&x)?;
            let (loss, grad) = cross_entropy(&logits, &labels)?;
            net.backward(&grad)?;
            sgd_step(net, opt)?;
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let record = EpochRecord {
            epoch,
            lr: opt.lr,
            loss: loss_sum / seen as f64,
            accuracy: evaluate(net, data, opts.batch_size)?,
        };
        on_epoch(&record);
        history.push(record);
    }
    net.set_bn_mode(BnMode::Train);
    Ok(history)
}

/// Top-1 accuracy with running BN statistics. Leaves the network in eval
/// mode.
pub fn evaluate(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<f64> {
    check_compatible(net, data)?;
    net.set_bn_mode(BnMode::Eval);
    let order: Vec<usize> = (0..data.count).collect();
    let mut correct = 0usize;
    for range in batches(data.count, batch_size) {
        let (x, labels) = data.batch(&order[range], &[])?;
        let logits = net.forward(&x)?;
        let classes = logits.shape().c;
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            let best = row.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
            );
            correct += usize::from(best.0 == label);
        }
    }
    Ok(correct as f64 / data.count as f64)
}

/// Mean cross-entropy over `data` in the given BN mode, computed on a copy
/// so the network's running statistics are untouched.
pub fn dataset_loss(net: &Network, data: &Dataset, batch_size: usize, mode: BnMode) -> Result<f64> {
    check_compatible(net, data)?;
    let mut probe = net.clone();
    probe.set_bn_mode(mode);
    let order: Vec<usize> = (0..data.count).collect();
    let mut sum = 0.0;
    for range in batches(data.count, batch_size) {
        let n = range.len();
        let (x, labels) = data.batch(&order[range], &[])?;
        let (loss, _) = cross_entropy(&probe.forward(&x)?, &labels)?;
        sum += loss * n as f64;
    }
    Ok(sum / data.count as f64)
}

use std::fmt::Write as _;
use std::io::Write;

use clap::ValueEnum;
use menet_core::analysis::{
    connectivity_bruteforce, connectivity_formula, conv_pattern, count_cost_with, shuffle_pattern, ConnectivityReport,
    CostPolicy,
};
use menet_core::layers::{
    shuffle_permutation, Activation, BatchNorm, ChannelShuffle, Conv2d, ConvSpec, Layer, Linear, Pool, PoolKind,
};
use menet_core::me::{EvolutionOp, MEModule, MEModuleConfig, MergingOp};
use menet_core::menet::{build_menet, MENetConfig};
use menet_core::tensor::{CombineMode, Shape4, Tensor};
use menet_core::training::{
    cross_entropy, evaluate, gradcheck, projection_objective, synthetic_separable, train_loop_with, EpochRecord,
    GradcheckReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::WeightArchive;
use crate::cli::{
    AnalyzeArgs, Cli, Command, EvalArgs, FlopsArgs, GradcheckArgs, ModelArgs, ShuffleArgs, SynthArgs, TrainArgs, Unit,
};
use crate::dataset_io::{load_dataset, save_dataset};
use crate::error::{CliError, CliResult};
use crate::io::write_bytes;

/// Runs one subcommand, writing its primary output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let text = match cli.command {
        Command::Build(a) => build(&a)?,
        Command::Flops(a) => flops(&a)?,
        Command::Analyze(a) => analyze(&a)?,
        Command::ShuffleDemo(a) => shuffle_demo(&a)?,
        Command::Gradcheck(a) => gradcheck_unit(&a)?,
        Command::Train(a) => train(&a)?,
        Command::Eval(a) => eval(&a)?,
        Command::MakeSynth(a) => make_synth(&a)?,
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io(std::path::Path::new("<stdout>"), e))
}

fn model_config(args: &ModelArgs) -> CliResult<MENetConfig> {
    let cfg = args.run_config()?.model;
    cfg.validate()?;
    Ok(cfg)
}

pub fn build(args: &ModelArgs) -> CliResult<String> {
    let cfg = model_config(args)?;
    let net = build_menet(&cfg, 0)?;
    let summary = net.summarize(net.input_shape(1)?)?;
    let mut s = format!("model {} groups {}\n", cfg.notation(), cfg.groups);
    write!(s, "{summary}").unwrap();
    Ok(s)
}

fn human(v: u64) -> String {
    format!("{:.2}M", v as f64 / 1e6)
}

pub fn flops(args: &FlopsArgs) -> CliResult<String> {
    let cfg = model_config(&args.model)?;
    let net = build_menet(&cfg, 0)?;
    let input = net.input_shape(args.batch)?;
    let policy = if args.all_ops {
        CostPolicy::all_ops()
    } else {
        CostPolicy::default()
    };
    let report = count_cost_with(&net, input, policy)?;
    if args.json {
        let mut s = serde_json::to_string_pretty(&report).expect("cost report serializes");
        s.push('\n');
        return Ok(s);
    }
    let mut s = String::new();
    writeln!(s, "model {}", cfg.notation()).unwrap();
    writeln!(s, "groups {}", cfg.groups).unwrap();
    writeln!(s, "input {input}").unwrap();
    writeln!(s, "policy {}", report.policy_tag).unwrap();
    if args.per_layer {
        for e in &report.entries {
            writeln!(s, "layer {} {} {}", e.name, e.output, e.macs).unwrap();
        }
    }
    writeln!(s, "params {}", report.total_params).unwrap();
    writeln!(s, "flops {} ({})", report.total_flops(), human(report.total_flops())).unwrap();
    Ok(s)
}

fn ratio(r: &ConnectivityReport) -> String {
    format!("{}/{}", r.lost_ratio.numer(), r.lost_ratio.denom())
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult<String> {
    let mut s = String::new();
    if let Some(max) = args.sweep {
        writeln!(s, "channels groups n_total n_actual formula_n_actual lost agrees").unwrap();
        let mut agree = 0;
        let mut total = 0;
        for c in 1..=max {
            for g in (1..=c).filter(|g| c % g == 0) {
                let b = connectivity_bruteforce(c, g)?;
                let f = connectivity_formula(c, g)?;
                let ok = b == f;
                agree += usize::from(ok);
                total += 1;
                writeln!(
                    s,
                    "{c} {g} {} {} {} {} {}",
                    b.n_total,
                    b.n_actual,
                    f.n_actual,
                    ratio(&b),
                    if ok { "yes" } else { "no" }
                )
                .unwrap();
            }
        }
        writeln!(s, "agreement {agree}/{total}").unwrap();
    }
    if let (Some(c), Some(g)) = (args.channels, args.groups) {
        let b = connectivity_bruteforce(c, g)?;
        let f = connectivity_formula(c, g)?;
        writeln!(s, "channels {c}").unwrap();
        writeln!(s, "groups {g}").unwrap();
        writeln!(s, "n_total {}", b.n_total).unwrap();
        writeln!(s, "n_actual {}", b.n_actual).unwrap();
        writeln!(s, "lost {} ({:.1}%)", ratio(&b), 100.0 * b.lost_ratio_f64()).unwrap();
        writeln!(
            s,
            "formula n_total {} n_actual {} lost {}",
            f.n_total,
            f.n_actual,
            ratio(&f)
        )
        .unwrap();
        if args.patterns {
            let pw = conv_pattern(&ConvSpec::pointwise(c, c, g)?);
            let plain = pw.then(&pw)?;
            let shuffled = pw.then(&shuffle_pattern(c, g)?)?.then(&pw)?;
            writeln!(
                s,
                "pattern without shuffle ({} of {} pairs)\n{plain}",
                plain.count(),
                c * c
            )
            .unwrap();
            writeln!(
                s,
                "pattern with shuffle ({} of {} pairs)\n{shuffled}",
                shuffled.count(),
                c * c
            )
            .unwrap();
        }
    } else if args.sweep.is_none() {
        return Err(CliError::Usage(
            "analyze needs --channels and --groups, or --sweep".into(),
        ));
    }
    Ok(s)
}

pub fn shuffle_demo(args: &ShuffleArgs) -> CliResult<String> {
    let perm = shuffle_permutation(args.channels, args.groups)?;
    let line: Vec<String> = perm.iter().map(usize::to_string).collect();
    Ok(format!("{}\n", line.join(" ")))
}

fn unit_instance(unit: Unit, combine: CombineMode, seed: u64) -> CliResult<(Box<dyn Layer>, Tensor, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = |c: usize, hw: usize, rng: &mut ChaCha8Rng| Tensor::randn(Shape4::new(2, c, hw, hw).unwrap(), 1.0, rng);
    let (layer, x, tol): (Box<dyn Layer>, Tensor, f64) = match unit {
        Unit::Pointwise => (
            Box::new(Conv2d::new(ConvSpec::pointwise(4, 6, 2)?, &mut rng)?),
            input(4, 6, &mut rng),
            1e-5,
        ),
        Unit::Conv3x3 => (
            Box::new(Conv2d::new(ConvSpec::conv3x3(3, 4, 2)?, &mut rng)?),
            input(3, 6, &mut rng),
            1e-5,
        ),
        Unit::Depthwise => (
            Box::new(Conv2d::new(ConvSpec::depthwise3x3(4, 1)?, &mut rng)?),
            input(4, 6, &mut rng),
            1e-5,
        ),
        Unit::Batchnorm => (Box::new(BatchNorm::new(4)?), input(4, 4, &mut rng), 1e-5),
        Unit::Relu => (Box::new(Activation::relu()), input(4, 4, &mut rng), 1e-5),
        Unit::Sigmoid => (Box::new(Activation::sigmoid()), input(4, 4, &mut rng), 1e-5),
        Unit::Maxpool => (Box::new(Pool::new(PoolKind::Max3x3s2)), input(4, 5, &mut rng), 1e-5),
        Unit::Avgpool => (Box::new(Pool::new(PoolKind::Avg3x3s2)), input(4, 5, &mut rng), 1e-5),
        Unit::GlobalPool => (Box::new(Pool::new(PoolKind::GlobalAvg)), input(4, 5, &mut rng), 1e-5),
        Unit::Shuffle => (Box::new(ChannelShuffle::new(2)), input(6, 3, &mut rng), 1e-5),
        Unit::Linear => (Box::new(Linear::new(4, 3, &mut rng)?), input(4, 1, &mut rng), 1e-5),
        Unit::Merging => (Box::new(MergingOp::new(4, 2, &mut rng)?), input(4, 4, &mut rng), 1e-4),
        Unit::Evolution => (
            Box::new(EvolutionOp::new(2, 4, 1, combine, &mut rng)?),
            input(2, 4, &mut rng),
            1e-4,
        ),
        Unit::Module => {
            let cfg = MEModuleConfig::standard(8, 2, 2).with_combine(combine);
            (Box::new(MEModule::new(cfg, &mut rng)?), input(8, 4, &mut rng), 1e-4)
        }
        Unit::ModuleDown => {
            let cfg = MEModuleConfig::downsampling(4, 8, 2, 2).with_combine(combine);
            (Box::new(MEModule::new(cfg, &mut rng)?), input(4, 4, &mut rng), 1e-4)
        }
        Unit::Network => unreachable!("handled by the caller"),
    };
    Ok((layer, x, tol))
}

fn describe_report(s: &mut String, r: &GradcheckReport, tol: f64) {
    writeln!(s, "values {}", r.checked()).unwrap();
    writeln!(s, "max_rel_error {:e}", r.max_rel_error()).unwrap();
    if let Some(w) = r.worst() {
        writeln!(s, "worst {} analytic {:e} numeric {:e}", w.name, w.analytic, w.numeric).unwrap();
    }
    writeln!(s, "tolerance {tol:e}").unwrap();
    let over = r.violations(tol, 0.0).len();
    let unexplained = r.unexplained(tol, 1e-7, 1e-3).len();
    writeln!(s, "above_tolerance {over}").unwrap();
    writeln!(s, "unexplained {unexplained}").unwrap();
    writeln!(s, "status {}", if over == 0 { "pass" } else { "fail" }).unwrap();
}

pub fn gradcheck_unit(args: &GradcheckArgs) -> CliResult<String> {
    let combine: CombineMode = args.combine.into();
    let name = args
        .unit
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let mut s = format!("unit {name}\nseed {}\n", args.seed);
    if args.unit == Unit::Network {
        let cfg = MENetConfig {
            stage_repeats: vec![1, 1, 1],
            input_size: 8,
            stem_channels: 8,
            stem_pool: false,
            num_classes: 2,
            combine_mode: combine,
            ..MENetConfig::new(24, 4, 1.0, 2)
        };
        let mut net = build_menet(&cfg, args.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let x = Tensor::randn(net.input_shape(4)?, 1.0, &mut rng);
        let labels = [0, 1, 1, 0];
        let r = gradcheck(&mut net, &x, |y: &Tensor| cross_entropy(y, &labels))?;
        describe_report(&mut s, &r, 1e-4);
        return Ok(s);
    }
    let (mut layer, x, tol) = unit_instance(args.unit, combine, args.seed)?;
    let out = layer.forward(&x)?.shape();
    let r = gradcheck(layer.as_mut(), &x, projection_objective(out, args.seed))?;
    describe_report(&mut s, &r, tol);
    Ok(s)
}

fn metric_line(r: &EpochRecord) -> String {
    format!("{} {} {} {}\n", r.epoch, r.lr, r.loss, r.accuracy)
}

pub fn train(args: &TrainArgs) -> CliResult<String> {
    let mut cfg = args.model.run_config()?;
    if let Some(d) = &args.data {
        cfg.data.train = Some(d.clone());
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(lr) = args.lr {
        cfg.schedule.base_lr = lr;
    }
    if let Some(w) = &args.weights {
        cfg.output.weights = Some(w.clone());
    }
    if let Some(m) = &args.metrics {
        cfg.output.metrics = Some(m.clone());
    }
    if let Some(d) = args.dtype {
        cfg.output.dtype = d.into();
    }
    cfg.validate()?;
    let data_path = cfg
        .data
        .train
        .clone()
        .ok_or_else(|| CliError::Usage("train needs a dataset (--data or data.train)".into()))?;
    let data = load_dataset(&data_path)?;
    let mut net = build_menet(&cfg.model, cfg.train.seed)?;
    let mut opt = cfg.optim_state()?;

    let mut metrics = String::new();
    let mut sink_error = None;
    let metrics_path = cfg.output.metrics.clone();
    if let Some(p) = &metrics_path {
        write_bytes(p, b"")?;
    }
    train_loop_with(&mut net, &data, &cfg.schedule, &mut opt, &cfg.train, |r| {
        let line = metric_line(r);
        if let (Some(p), None) = (&metrics_path, &sink_error) {
            let appended = std::fs::OpenOptions::new()
                .append(true)
                .open(p)
                .and_then(|mut f| f.write_all(line.as_bytes()));
            if let Err(e) = appended {
                sink_error = Some(CliError::io(p, e));
            }
        }
        metrics.push_str(&line);
    })?;
    if let Some(e) = sink_error {
        return Err(e);
    }
    if let Some(w) = &cfg.output.weights {
        WeightArchive::from_network(&mut net).save(w, cfg.output.dtype)?;
    }
    Ok(metrics)
}

pub fn eval(args: &EvalArgs) -> CliResult<String> {
    let mut net = WeightArchive::load(&args.weights)?.to_network()?;
    let data = load_dataset(&args.data)?;
    let acc = evaluate(&mut net, &data, args.batch_size)?;
    let correct = (acc * data.count as f64).round() as usize;
    Ok(format!("accuracy {acc} ({correct}/{})\n", data.count))
}

pub fn make_synth(args: &SynthArgs) -> CliResult<String> {
    let data = synthetic_separable(args.count, args.channels, args.size, args.classes, args.seed)?;
    save_dataset(&args.out, &data)?;
    Ok(format!(
        "wrote {} samples of {}x{}x{} with {} classes to {}\n",
        data.count,
        data.channels,
        data.height,
        data.width,
        data.class_count,
        args.out.display()
    ))
}

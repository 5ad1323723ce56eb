use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use menet_core::menet::{parse_notation, DensePointwise};
use menet_core::tensor::CombineMode;

use crate::archive::Dtype;
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "menet", version, about = "Build, analyse and train MENet models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a model configuration and print its layer summary
    Build(ModelArgs),
    /// Count multiply-accumulates of a model
    Flops(FlopsArgs),
    /// Inter-group connectivity of two stacked group convolutions
    Analyze(AnalyzeArgs),
    /// Print the channel shuffle permutation
    ShuffleDemo(ShuffleArgs),
    /// Compare analytic and finite-difference gradients
    Gradcheck(GradcheckArgs),
    /// Train on a dataset and write metrics and weights
    Train(TrainArgs),
    /// Accuracy of a weight archive on a dataset
    Eval(EvalArgs),
    /// Write a synthetic linearly separable dataset
    MakeSynth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CombineArg {
    Product,
    Addition,
}

impl From<CombineArg> for CombineMode {
    fn from(c: CombineArg) -> Self {
        match c {
            CombineArg::Product => CombineMode::Product,
            CombineArg::Addition => CombineMode::Addition,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenseArg {
    FirstModule,
    WholeStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F64,
    F32,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F64 => Dtype::F64,
            DtypeArg::F32 => Dtype::F32,
        }
    }
}

/// Model selection: a config file, overridden by individual flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model name, e.g. 228-MENet-12x1 or 228-MENet-12×1
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub stem_channels: Option<usize>,
    /// Skip the max pool after the stem convolution
    #[arg(long)]
    pub no_stem_pool: bool,
    /// Modules per stage, comma separated
    #[arg(long, value_delimiter = ',')]
    pub repeats: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub combine: Option<CombineArg>,
    #[arg(long, value_enum)]
    pub dense_pointwise: Option<DenseArg>,
}

impl ModelArgs {
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        let m = &mut cfg.model;
        if let Some(name) = &self.model {
            let n = parse_notation(name)?;
            m.residual_width = n.residual_width;
            m.fusion_width = n.fusion_width;
            m.expansion = n.expansion;
        }
        if let Some(g) = self.groups {
            m.groups = g;
        }
        if let Some(s) = self.input_size {
            m.input_size = s;
        }
        if let Some(c) = self.classes {
            m.num_classes = c;
        }
        if let Some(c) = self.stem_channels {
            m.stem_channels = c;
        }
        if self.no_stem_pool {
            m.stem_pool = false;
        }
        if let Some(r) = &self.repeats {
            m.stage_repeats = r.clone();
        }
        if let Some(c) = self.combine {
            m.combine_mode = c.into();
        }
        if let Some(d) = self.dense_pointwise {
            m.dense_pointwise = match d {
                DenseArg::FirstModule => DensePointwise::FirstModule,
                DenseArg::WholeStage => DensePointwise::WholeStage,
            };
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FlopsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Also charge batch norm, elementwise and pooling operations
    #[arg(long)]
    pub all_ops: bool,
    /// Print one row per layer
    #[arg(long)]
    pub per_layer: bool,
    /// Print the full report as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Compare formula and enumeration for every G | C with C up to this bound
    #[arg(long)]
    pub sweep: Option<usize>,
    /// Print channel dependency patterns with and without the shuffle
    #[arg(long)]
    pub patterns: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ShuffleArgs {
    #[arg(long)]
    pub channels: usize,
    #[arg(long)]
    pub groups: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Unit {
    Pointwise,
    Conv3x3,
    Depthwise,
    Batchnorm,
    Relu,
    Sigmoid,
    Maxpool,
    Avgpool,
    GlobalPool,
    Shuffle,
    Linear,
    Merging,
    Evolution,
    Module,
    ModuleDown,
    Network,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub unit: Unit,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CombineArg::Product)]
    pub combine: CombineArg,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training dataset manifest
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Output weight manifest; the blob is written beside it
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output metrics file
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dtype: Option<DtypeArg>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Weight manifest
    #[arg(long)]
    pub weights: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output dataset manifest; the blob is written beside it
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub count: usize,
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

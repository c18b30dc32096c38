use std::path::PathBuf;

use clap::Args;
use gcnflow::{InitKind, SkipMode, SkipSource, TrainConfig};

/// Hyperparameters shared by every training subcommand.
#[derive(Debug, Clone, Args)]
pub struct Hyper {
    /// Hidden width of every layer but the classifier.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden: u64,
    /// Skip ratio α for residual, initial and dynamic skips.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Dynamic rewiring fires when a layer's gradient norm drops below this
    /// fraction of its first-epoch value.
    #[arg(long, default_value_t = 0.5)]
    pub p_threshold: f64,
    /// Source of dynamic skips: first hidden layer output or previous layer.
    #[arg(long, default_value = "first", value_parser = parse_source)]
    pub skip_source: SkipSource,
    /// Dropout rate on every layer input during training.
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    /// L2 penalty added to weight gradients.
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    /// Training epochs.
    #[arg(long, default_value_t = 1500)]
    pub epochs: usize,
    /// Evaluate on validation and test nodes every this many epochs.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub eval_stride: u64,
    /// Log per-layer Dirichlet energy every this many epochs (0 disables).
    #[arg(long, default_value_t = 10)]
    pub energy_stride: usize,
}

impl Hyper {
    pub fn config(&self, layers: usize, init: InitKind, skip: SkipMode, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            hidden_dim: self.hidden as usize,
            num_layers: layers,
            init,
            skip_mode: skip,
            alpha: self.alpha,
            p_threshold: self.p_threshold,
            skip_source: self.skip_source,
            dropout: self.dropout,
            seed,
            eval_stride: self.eval_stride as usize,
            energy_stride: self.energy_stride,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Bundle directory, or a generated graph such as `synthetic:sbm:3x100:0.05:0.005`.
    #[arg(long, default_value = "data/cora")]
    pub dataset: String,
    /// Number of graph convolution layers.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: u64,
    /// Weight initialization: glorot, iso, iso-gauss or iso-ortho.
    #[arg(long, default_value = "glorot", value_parser = parse_init)]
    pub init: InitKind,
    /// Skip connections: none, residual, initial, jumping or dynamic.
    #[arg(long, default_value = "none", value_parser = parse_skip)]
    pub skip: SkipMode,
    /// Seed for initialization and dropout.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for `metrics.jsonl` and `model.ckpt`.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: Hyper,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Bundle directory, or a generated graph such as `synthetic:sbm:3x100:0.05:0.005`.
    #[arg(long, default_value = "data/cora")]
    pub dataset: String,
    /// Depths to sweep, e.g. `2,10` or `2..12`.
    #[arg(long, default_value = "2,10", value_parser = parse_layer_list)]
    pub layers: IndexList,
    /// Seeds to sweep, e.g. `1..10` or `1,2,3`.
    #[arg(long, default_value = "1..10", value_parser = parse_list)]
    pub seed: IndexList,
    /// Maximum number of runs in flight.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Output directory for per-run metrics and `summary.csv`.
    #[arg(long, default_value = "runs/sweep")]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: Hyper,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    /// Bundle directory, or a generated graph such as `synthetic:ring:4`.
    #[arg(long, default_value = "data/cora")]
    pub dataset: String,
    /// Output widths C' to report initialization bounds for, e.g. `16,64`.
    #[arg(long, default_value = "64", value_parser = parse_layer_list)]
    pub hidden: IndexList,
}

#[derive(Debug, Clone, Args)]
pub struct EnergyProbeArgs {
    /// Bundle directory, or a generated graph such as `synthetic:sbm:3x100:0.05:0.005`.
    #[arg(long, default_value = "data/cora")]
    pub dataset: String,
    /// Number of graph convolution layers.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: u64,
    /// Weight initialization: glorot, iso, iso-gauss or iso-ortho.
    #[arg(long, default_value = "glorot", value_parser = parse_init)]
    pub init: InitKind,
    /// Skip connections: none, residual, initial, jumping or dynamic.
    #[arg(long, default_value = "none", value_parser = parse_skip)]
    pub skip: SkipMode,
    /// Seed for initialization and dropout.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Optional JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: Hyper,
}

/// A non-empty list of integers parsed from `a,b,c` and inclusive `a..b`
/// ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexList(pub Vec<u64>);

pub fn parse_list(text: &str) -> Result<IndexList, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
            let hi: u64 = hi.trim_start_matches('=').trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
            if lo > hi {
                return Err(format!("empty range {part:?}"));
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|e| format!("{part:?}: {e}"))?);
        }
    }
    if out.is_empty() {
        return Err("list is empty".into());
    }
    Ok(IndexList(out))
}

fn parse_layer_list(text: &str) -> Result<IndexList, String> {
    let list = parse_list(text)?;
    if list.0.contains(&0) {
        return Err("values must be >= 1".into());
    }
    Ok(list)
}

fn parse_init(text: &str) -> Result<InitKind, String> {
    text.parse().map_err(|e: gcnflow::Error| e.to_string())
}

fn parse_skip(text: &str) -> Result<SkipMode, String> {
    text.parse().map_err(|e: gcnflow::Error| e.to_string())
}

fn parse_source(text: &str) -> Result<SkipSource, String> {
    text.parse().map_err(|e: gcnflow::Error| e.to_string())
}

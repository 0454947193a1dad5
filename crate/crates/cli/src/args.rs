use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use llp_core::config;
use llp_core::pipeline::PipelineConfig;

#[derive(Parser, Debug)]
#[command(
    name = "llp",
    version,
    about = "Learning from label proportions with BP pseudo-labels"
)]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a two-Gaussian synthetic dataset.
    Synth(SynthArgs),
    /// Split a dataset and cut random training bags.
    Bags(BagsArgs),
    /// Run BP on a model file, or on a model built from data and bags.
    Bp(BpArgs),
    /// Run the full iterative pipeline.
    Pipeline(PipelineArgs),
    /// Train the DLLP baseline on the same bags.
    Dllp(PipelineArgs),
    /// Convergence diagnostics of a model.
    Stability(StabilityArgs),
    /// Score a dataset with a saved model.
    Eval(EvalArgs),
    /// Run the pipeline over a grid of settings.
    Grid(GridArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the 0/1 label column.
    #[arg(long = "labels-col", default_value = "y")]
    pub labels_col: String,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
    pub split: (f64, f64, f64),
    #[arg(long = "bag-size")]
    pub bag_size: Option<usize>,
    /// Directory with bags.csv, counts.csv and split.json from `llp bags`.
    #[arg(long = "bags-dir")]
    pub bags_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BagsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

/// Hyperparameter flags. Each maps to the config key of the same name and
/// overrides the `--config` file.
#[derive(Args, Debug, Clone, Default)]
pub struct StageFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "delta-d")]
    pub delta_d: Option<String>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "length-scale")]
    pub length_scale: Option<f64>,
    #[arg(long = "lambda-b")]
    pub lambda_b: Option<f64>,
    #[arg(long = "lambda-s")]
    pub lambda_s: Option<f64>,
    #[arg(long = "lambda-a")]
    pub lambda_a: Option<f64>,
    /// BP rounds.
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "threshold-mode")]
    pub threshold_mode: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "knn-fraction")]
    pub knn_fraction: Option<f64>,
    #[arg(long = "dp-epsilon")]
    pub dp_epsilon: Option<f64>,
    #[arg(long = "dp-delta")]
    pub dp_delta: Option<f64>,
    #[arg(long = "hidden-dims")]
    pub hidden_dims: Option<String>,
    #[arg(long = "learning-rate")]
    pub learning_rate: Option<f64>,
    #[arg(long = "weight-decay")]
    pub weight_decay: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub pooling: Option<String>,
    /// Extra `key=value` settings, as in the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl StageFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident => $key:literal),* $(,)?) => {
                $(if let Some(v) = &self.$field { out.push(($key, v.to_string())); })*
            };
        }
        // kernel before its parameters, so switching kernels then tuning works
        push!(
            kernel => "kernel", gamma => "gamma", length_scale => "length_scale",
            k => "k", delta_d => "delta_d", metric => "metric",
            lambda_b => "lambda_b", lambda_s => "lambda_s", lambda_a => "lambda_a",
            t => "T", damping => "damping", tau => "tau", threshold_mode => "threshold_mode",
            iterations => "iterations", knn_fraction => "knn_fraction",
            dp_epsilon => "dp_epsilon", dp_delta => "dp_delta", hidden_dims => "hidden_dims",
            learning_rate => "learning_rate", weight_decay => "weight_decay",
            batch_size => "batch_size", max_epochs => "max_epochs", patience => "patience",
            pooling => "pooling",
        );
        out
    }

    /// Defaults, then the config file, then individual flags.
    pub fn resolve(&self, seed: u64) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => config::load_file(path)?,
            None => PipelineConfig::default(),
        };
        cfg.seed = seed;
        for (k, v) in self.pairs() {
            cfg.set(k, &v).with_context(|| format!("flag for {k}"))?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct ModelSource {
    /// Node potentials CSV (index,h); use with --pairs.
    #[arg(long, requires = "pairs")]
    pub nodes: Option<PathBuf>,
    /// Pairwise couplings CSV (i,j,J).
    #[arg(long, requires = "nodes")]
    pub pairs: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stage: StageFlags,
}

#[derive(Args, Debug)]
pub struct BpArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Decode a single MAP labelling with max-product instead of marginals.
    #[arg(long = "max-product")]
    pub max_product: bool,
    #[arg(long = "bp-tolerance")]
    pub tolerance: Option<f64>,
    /// Also write the model as nodes.csv / pairs.csv.
    #[arg(long = "write-model")]
    pub write_model: bool,
    /// Include the edge-incidence spectral norm in diagnostics.json.
    #[arg(long = "spectral-norm")]
    pub spectral_norm: bool,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long = "power-iters", default_value_t = 500)]
    pub power_iters: usize,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stage: StageFlags,
    /// Re-run exactly the run recorded in this manifest.
    #[arg(long, conflicts_with_all = ["data", "config"])]
    pub manifest: Option<PathBuf>,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "labels-col", default_value = "y")]
    pub labels_col: String,
    /// Manifest of the training run; restores its split and feature scaling
    /// and restricts evaluation to the test rows.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write `instance_index,score` for every scored row.
    #[arg(long = "scores-out")]
    pub scores_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stage: StageFlags,
    /// `key=v1,v2,...`; repeat for a product grid.
    #[arg(long = "grid", value_name = "KEY=V1,V2", required = true)]
    pub grid: Vec<String>,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

fn parse_fractions(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(format!(
            "expected three comma-separated fractions, got '{s}'"
        )),
    }
}

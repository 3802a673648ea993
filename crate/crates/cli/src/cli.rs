//! Command-line definitions. Every setting flag is optional: unset flags
//! fall back to the `--config` file and then to the built-in defaults, so
//! flag structs serialize only the options that were given.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "oclbench",
    version,
    about = "Synthetic data, training, evaluation and metrics for slot-based models"
)]
pub struct Cli {
    /// JSON file with settings for the command; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic grounded-QA dataset.
    Synth(SynthArgs),
    /// Train the slot model and the question-answering probe.
    Train(TrainArgs),
    /// Run a trained model on a dataset and score it.
    Eval(EvalArgs),
    /// Score a predictions file against a dataset.
    Metrics(MetricsArgs),
    /// Run the built-in gradient, metric and encoding self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Maximum objects per scene (at most 7).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objects: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_objects: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_size: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory or dataset.jsonl.
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    /// Output directory for checkpoints and loss curves.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads for slot inference.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    pub jobs: usize,
    /// Comma-separated reconstruction targets: image, feature, hog.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoders: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_slot: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoder_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_batch: Option<usize>,
    /// Connector layers: 1 or 2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub connector_depth: Option<usize>,
    #[arg(long, value_parser = ["cross-attention", "mean-pool-linear"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    /// Train the probe on seeded noise instead of slots (a blind baseline).
    #[arg(long)]
    #[serde(rename = "probe_blind", skip_serializing_if = "std::ops::Not::not")]
    pub blind: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    /// Slot-model checkpoint written by `train`.
    #[arg(long)]
    #[serde(skip)]
    pub ocl: PathBuf,
    /// Probe checkpoint written by `train`.
    #[arg(long)]
    #[serde(skip)]
    pub probe: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    pub jobs: usize,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Replace the slots with seeded noise before the probe.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub blind: bool,
    #[arg(long, value_parser = ["grad", "integrated", "finite-diff"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ig_steps: Option<usize>,
    #[arg(long, value_parser = ["logit", "loss"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr_target: Option<String>,
    #[arg(long, value_parser = ["l2", "abs-sum"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr_reduce: Option<String>,
    #[arg(long, value_parser = ["attention", "decoder-alpha"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_source: Option<String>,
    #[arg(long, value_parser = ["best-overlap", "union"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eq1_mode: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long, requires = "data")]
    #[serde(skip)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub data: Option<PathBuf>,
    /// Directory for report.json, report.txt and trace.csv; stdout otherwise.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["best-overlap", "union"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eq1_mode: Option<String>,
    /// CSV table with one row per model; adds the Spearman correlation of
    /// two of its columns.
    #[arg(long)]
    #[serde(skip)]
    pub spearman_table: Option<PathBuf>,
    /// The two columns to correlate (default: the first two numeric ones).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman_columns: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random seeds per gradient check.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Scale the backward rule of one primitive, as `name[:factor]`.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

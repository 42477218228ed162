//! Command-line arguments. Every optional flag `--some-key` has a config-file
//! twin `some_key`; flags win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "protorel",
    version,
    about = "Few-shot relation extraction with hybrid prototypes",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    /// Worker threads for training and evaluation (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Re-run the command recorded in a run manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub replay: Option<PathBuf>,
    /// With --replay, write artifacts here instead of the recorded directory.
    #[arg(long, value_name = "DIR", requires = "replay")]
    pub replay_out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on sampled episodes.
    Eval(EvalArgs),
    /// Print one sampled episode.
    Sample(SampleArgs),
    /// Show the task weights of one batch under a checkpoint.
    InspectWeights(InspectArgs),
    /// Compare analytic gradients against finite differences.
    CheckGradients(CheckArgs),
    /// Generate a synthetic corpus and catalog.
    MakeSynthetic(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Sample(_) => "sample",
            Command::InspectWeights(_) => "inspect-weights",
            Command::CheckGradients(_) => "check-gradients",
            Command::MakeSynthetic(_) => "make-synthetic",
        }
    }

    /// Config file path plus the flag values as a JSON object.
    pub fn flags(&self) -> (Option<PathBuf>, serde_json::Value, serde_json::Value) {
        fn pack<T: Serialize + Default>(args: &T, config: &Option<PathBuf>) -> (Option<PathBuf>, serde_json::Value, serde_json::Value) {
            (
                config.clone(),
                serde_json::to_value(args).expect("flags serialize"),
                serde_json::to_value(T::default()).expect("flags serialize"),
            )
        }
        match self {
            Command::Train(a) => pack(a, &a.config),
            Command::Eval(a) => pack(a, &a.config),
            Command::Sample(a) => pack(a, &a.config),
            Command::InspectWeights(a) => pack(a, &a.config),
            Command::CheckGradients(a) => pack(a, &a.config),
            Command::MakeSynthetic(a) => pack(a, &a.config),
        }
    }
}

/// Keys shared by commands that build a training config.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainKeys {
    /// Ways per training episode.
    #[arg(long)]
    pub n: Option<usize>,
    /// Shots per class.
    #[arg(long)]
    pub k: Option<usize>,
    /// Queries per episode.
    #[arg(long)]
    pub r: Option<usize>,
    /// Episodes per batch.
    #[arg(long)]
    pub t: Option<usize>,
    /// Focusing parameter of the focal loss.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Weight of the contrastive term.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub use_local: Option<bool>,
    #[arg(long)]
    pub use_global: Option<bool>,
    #[arg(long)]
    pub use_contrastive: Option<bool>,
    /// ce | ce-task-weights | focal | task-adaptive-focal
    #[arg(long)]
    pub loss: Option<String>,
    /// exp | strict
    #[arg(long)]
    pub contrastive_mode: Option<String>,
    /// Backpropagate through the task weights.
    #[arg(long)]
    pub task_weight_grad: Option<bool>,
    /// sgd | adamw
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Hidden size of the toy encoder.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Self-attention mixing layer in the toy encoder.
    #[arg(long)]
    pub mixing: Option<bool>,
    /// uniform | balanced
    #[arg(long)]
    pub query_sampling: Option<String>,
    #[arg(long)]
    pub val_every: Option<usize>,
    #[arg(long)]
    pub val_episodes: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainArgs {
    /// TOML file with flat `key = value` settings.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Held-out corpus for periodic validation.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Frozen embedding store; replaces the toy encoder.
    #[arg(long)]
    pub frozen_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub keys: TrainKeys,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub frozen_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// random | easy | hard | custom
    #[arg(long)]
    pub setting: Option<String>,
    /// Comma-separated relation ids or names.
    #[arg(long)]
    pub relations: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub query_sampling: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated relation ids or names; sampled when absent.
    #[arg(long)]
    pub relations: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub query_sampling: Option<String>,
    /// text | json
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct InspectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub frozen_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Explicit tasks: relation lists separated by `;`, e.g. `a,b,c;d,e,f`.
    #[arg(long)]
    pub tasks: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub query_sampling: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct CheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Check at these parameters instead of a fresh initialization.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub frozen_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Central-difference step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Largest accepted per-block relative error.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Multiplier applied to a fresh initialization before checking
    /// (default 6). At the raw initial scale the attention gradients are
    /// near the difference-quotient noise floor. Ignored with --checkpoint.
    #[arg(long)]
    pub param_scale: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub keys: TrainKeys,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub relations_per_cluster: Option<usize>,
    /// Instances per relation.
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Probability of drawing a token from the shared cluster slice.
    #[arg(long)]
    pub hardness: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub description_len: Option<usize>,
    /// Also write a train/held-out split keeping this many instances per
    /// relation out of training.
    #[arg(long)]
    pub holdout: Option<usize>,
}

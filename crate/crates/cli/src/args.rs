use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ketm::fusion::Head;

#[derive(Debug, Parser)]
#[command(name = "ketm", version, about = "Knowledge-enhanced text matching")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply to anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override the model and training sections of the config.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,

    /// Drop the knowledge path: no fusion layer, `Z = H`.
    #[arg(long)]
    pub no_knowledge: bool,

    #[arg(long)]
    pub head: Option<Head>,

    #[arg(long)]
    pub blocks: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the configured splits and save checkpoints.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },

    /// Accuracy of a checkpoint on a labelled split.
    Eval {
        /// Defaults to `best.ckpt` in the configured checkpoint directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,

        /// Which configured split to score.
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
        split: String,

        /// Score this file instead of a configured split.
        #[arg(long)]
        data: Option<PathBuf>,
    },

    /// Classify one sentence pair.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,

        #[arg(long)]
        dictionary: Option<PathBuf>,

        /// Write the co-attention matrix of the pair as CSV.
        #[arg(long)]
        attention: Option<PathBuf>,

        premise: String,
        hypothesis: String,
    },

    /// Compare analytic and finite-difference gradients of every layer and
    /// of the whole model, in 64-bit with dropout off.
    Gradcheck {
        #[command(flatten)]
        overrides: Overrides,

        /// Coordinates sampled per parameter; 0 checks every coordinate.
        #[arg(long, default_value_t = 8)]
        coords: usize,

        /// Central-difference step, within [1e-6, 1e-4]. Wide models have
        /// relu and max-pool kinks within 1e-5 of typical points, so the
        /// default is the smallest step.
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,

        #[arg(long, hide = true)]
        corrupt_gradient: Option<String>,
    },

    /// Print the knowledge text retrieved for a sentence.
    Retrieve {
        #[arg(long)]
        dictionary: Option<PathBuf>,

        sentence: String,
    },
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use claimrank::{CHECKPOINT_VERSION, INDEX_VERSION};

fn long_version() -> &'static str {
    Box::leak(
        format!(
            "{}\ncheckpoint format: CRNK v{CHECKPOINT_VERSION}\nindex format: BIDX v{INDEX_VERSION}",
            env!("CARGO_PKG_VERSION")
        )
        .into_boxed_str(),
    )
}

#[derive(Debug, Parser)]
#[command(name = "claimrank", version, long_version = long_version())]
#[command(about = "Match social-media posts to previously fact-checked claims")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Multilingual,
    Crosslingual,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat key = value settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for query retrieval, 0 for all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Default hyperparameters; crosslingual also forces the English view.
    #[arg(long, global = true, value_enum, default_value_t = Mode::Multilingual)]
    pub mode: Mode,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Training flags that override config-file keys.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub lr_backbone: Option<f64>,
    #[arg(long)]
    pub lr_custom: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Hold this fold out and train on the rest.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset directory and print per-language counts.
    Ingest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train an encoder and write a model directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Embed fact-checks with a trained model as JSON lines.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a search index from embedded fact-checks.
    BuildIndex {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve the top-k fact-checks for each post.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        posts: PathBuf,
        /// Model directory, by default the index file's directory.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a scored run file for later fusion.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Fuse scored run files into one prediction file.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        k_out: Option<usize>,
        #[arg(long)]
        min_max: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the fused scores as a run file.
        #[arg(long)]
        fused_run: Option<PathBuf>,
    },
    /// Score a prediction file against a mapping file.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Write the report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Assign every mapping pair to a fold.
    SplitFolds {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, embed, index, retrieve and evaluate in one run.
    Pipeline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        negative_fraction: Option<f64>,
        #[command(flatten)]
        flags: TrainFlags,
    },
}

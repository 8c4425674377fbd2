use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fewshot-stack", version, about = "Few-shot classification over stacked backbone features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check feature files and whether they join.
    Validate {
        /// Feature files (.fsf).
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Repeated-episode evaluation.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Grid side S of the stacked input.
        #[arg(long)]
        reshape: Option<usize>,
        /// Hidden dense widths, comma separated (first is the dense input layer).
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// Also train one head on the first episode's support set and save it.
        #[arg(long)]
        save_head: Option<PathBuf>,
    },
    /// Evaluation at several shot counts.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        reshape: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// Shot counts, comma separated.
        #[arg(long = "k-values", value_delimiter = ',', default_value = "1,3,5")]
        k_values: Vec<usize>,
    },
    /// Grid over backbone subsets, reshape sides and MLP structures.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Reshape sides, comma separated.
        #[arg(long, value_delimiter = ',')]
        reshape: Option<Vec<usize>>,
        /// One MLP structure per occurrence, widths comma separated.
        #[arg(long)]
        hidden: Vec<String>,
        /// One backbone subset per occurrence: indices or backbone names,
        /// comma separated. Defaults to every non-empty subset.
        #[arg(long)]
        subset: Vec<String>,
    },
    /// 2-D t-SNE embedding of one episode's query set.
    Tsne {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        reshape: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// Embed the joined feature vectors instead of trained activations.
        #[arg(long)]
        raw_features: bool,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Trainable and frozen parameter counts of a head.
    Params {
        /// Joined feature dimension.
        #[arg(long, default_value_t = 6016)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        reshape: usize,
        #[arg(long, default_value_t = 512)]
        filters: usize,
        #[arg(long, value_delimiter = ',', default_value = "512,256,32")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        ways: usize,
        /// Backbone identifiers whose frozen counts to list.
        #[arg(long, value_delimiter = ',')]
        backbones: Vec<String>,
    },
    /// Write synthetic clustered feature files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// One file per entry.
        #[arg(long, value_delimiter = ',', default_value = "2048,2048,1920")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        per_class: usize,
        /// Center distance in noise units.
        #[arg(long, default_value_t = 10.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags shared by the commands that train heads.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Feature files in concatenation order.
    #[arg(long, required = true, num_args = 1..)]
    pub features: Vec<PathBuf>,
    /// Flat JSON file of defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub ways: Option<usize>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    /// Items drawn per class before the support/query split.
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Falls back to FEWSHOT_STACK_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// f32 or f64 head arithmetic.
    #[arg(long)]
    pub precision: Option<String>,
    /// Drop items missing from any file instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

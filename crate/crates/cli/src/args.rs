use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgh_core::StrategyOverride;

#[derive(Debug, Parser)]
#[command(name = "kgh", version, about = "Knowledge-graph hierarchy induction pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline config file (TOML, or JSON by extension).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override the working snapshot path.
    #[arg(long, global = true)]
    pub snapshot: Option<PathBuf>,
    /// Override the output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Override the node class the pipeline organizes.
    #[arg(long, global = true)]
    pub node_class: Option<String>,
    /// Override every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Auto,
    OneShot,
    Cyclical,
}

impl From<StrategyArg> for StrategyOverride {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Auto => StrategyOverride::Auto,
            StrategyArg::OneShot => StrategyOverride::OneShot,
            StrategyArg::Cyclical => StrategyOverride::Cyclical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Coverage fixture for the intent class (before and after snapshots).
    Intents,
    /// Coverage fixture for the color class.
    Colors,
    /// Seeded gold hierarchy plus everything a mock pipeline run needs.
    Synthetic,
    /// The small relationships category used in review examples.
    Relationships,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign nodes to L1 categories.
    Classify {
        /// Consensus passes over shuffled input.
        #[arg(long)]
        passes: Option<usize>,
    },
    /// Generate one hierarchy delta per L1 category from the classification.
    Generate {
        /// Override the configured strategy for every category.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Classification results; defaults to the output directory's.
        #[arg(long)]
        classification: Option<PathBuf>,
    },
    /// Apply deltas, correction sets and domain subgraphs to the snapshot.
    Merge {
        /// Delta files or directories of them; defaults to the output
        /// directory's deltas.
        #[arg(long = "delta")]
        deltas: Vec<PathBuf>,
        /// Correction set files or directories of them.
        #[arg(long = "corrections")]
        corrections: Vec<PathBuf>,
        /// Snapshot files whose hierarchy is merged in as a new domain.
        #[arg(long = "subgraph")]
        subgraphs: Vec<PathBuf>,
        /// Write the result here instead of over the working snapshot.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coverage and per-level counts.
    Stats {
        /// Snapshot before generation; defaults to the working snapshot with
        /// generated and corrected edges removed.
        #[arg(long)]
        before: Option<PathBuf>,
    },
    /// Draw a stratified review sample.
    ReviewExport {
        /// Fraction of each stratum to sample.
        #[arg(long)]
        rate: Option<f64>,
        /// Reviewer assigned to every exported sample.
        #[arg(long)]
        reviewer: Option<String>,
    },
    /// Apply reviewer corrections and summarize recorded outcomes.
    ReviewApply {
        /// Correction set files or directories; defaults to the staged corrections.
        #[arg(long = "corrections")]
        corrections: Vec<PathBuf>,
        /// Review samples with outcomes filled in.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Compare both strategies under oracle noise on a synthetic gold graph.
    Experiment {
        /// Comma-separated noise rates.
        #[arg(long, value_delimiter = ',')]
        noise: Option<Vec<f64>>,
        /// Seeds per noise rate.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Serve the review API.
    Serve {
        /// Address to listen on.
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Apply posted corrections immediately instead of staging them.
        #[arg(long)]
        live: bool,
    },
    /// Write a fixture to a directory.
    Fixture {
        #[arg(value_enum)]
        kind: FixtureKind,
        /// Directory to write into.
        #[arg(long)]
        out: PathBuf,
        /// Synthetic hierarchy depth.
        #[arg(long, default_value_t = 4)]
        depth: u32,
        /// Synthetic node count, roots included.
        #[arg(long, default_value_t = 120)]
        nodes: usize,
        /// Seed for the synthetic hierarchy.
        #[arg(long = "fixture-seed", default_value_t = 1)]
        fixture_seed: u64,
    },
}

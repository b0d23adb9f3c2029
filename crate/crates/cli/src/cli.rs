use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsn_core::force::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "gsn", version, about = "Spring-force ODE embeddings for signed graphs")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel force evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Serial evaluation in a fixed reduction order.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// JSON file of settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Re-run the command recorded in a manifest.
    #[arg(long, global = true)]
    pub from_manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load an edge list, merge it into an undirected graph, and write a dump.
    Ingest(InputArgs),
    /// Hide a share of edge signs.
    Split(SplitArgs),
    /// Train force parameters.
    Train(TrainArgs),
    /// Simulate a graph with trained parameters and write embeddings.
    Embed(EmbedArgs),
    /// Score link-sign predictions on hidden edges.
    Eval(EvalArgs),
    /// Time the force field and the simulator on synthetic graphs.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// `src dst sign` per line.
    Plain,
    /// `src,dst,rating[,time]` with the sign taken from the rating.
    #[value(alias = "rating_csv")]
    RatingCsv,
    /// Graph dump with true and observed signs.
    Dump,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Edge list or dump; `.gz` files are decompressed.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
}

#[derive(Debug, Args)]
pub struct SplitFlags {
    /// Share of edges whose sign is hidden.
    #[arg(long)]
    pub p_hidden: Option<f64>,

    /// Seed of the hiding draw (defaults to --seed).
    #[arg(long)]
    pub split_seed: Option<u64>,

    /// Hide exactly ceil(p M) edges instead of Bernoulli draws.
    #[arg(long)]
    pub exact_split: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub split: SplitFlags,
}

#[derive(Debug, Args)]
pub struct SimFlags {
    /// Embedding dimension.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub damping: Option<f64>,
    /// Euler steps per simulation.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Update positions with the new velocity.
    #[arg(long)]
    pub semi_implicit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CliLossDomain {
    VisibleOnly,
    AllEdgesOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CliTargets {
    #[value(alias = "paper_literal", alias = "paper-literal")]
    PlusMinusOne,
    ZeroOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CliInitPolicy {
    Resample,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CliDegreeFeatures {
    Normalized,
    Raw,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub sim: SimFlags,

    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Logistic threshold on edge length.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, value_enum)]
    pub loss_domain: Option<CliLossDomain>,
    #[arg(long, value_enum)]
    pub targets: Option<CliTargets>,
    #[arg(long, value_enum)]
    pub init_policy: Option<CliInitPolicy>,
    #[arg(long, value_enum)]
    pub degree_features: Option<CliDegreeFeatures>,
    /// Share of visible edges held out for the history metrics.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Write checkpoint.json every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run on the same input.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub sim: SimFlags,

    /// Trained parameter file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Hidden edges as `u v` label pairs; replaces the random split.
    #[arg(long)]
    pub hidden: Option<PathBuf>,
    /// Write the binary embedding format.
    #[arg(long)]
    pub binary: bool,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub sim: SimFlags,

    /// Embeddings to score (text or binary); the input graph supplies the
    /// hidden edges.
    #[arg(long, conflicts_with = "params")]
    pub embeddings: Option<PathBuf>,
    /// Hidden edges as `u v` label pairs.
    #[arg(long)]
    pub hidden: Option<PathBuf>,
    /// Parameters to embed with, once per seed.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Number of seeds in multi-seed mode.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Fit the logistic classifier on visible edges instead of the fixed
    /// threshold.
    #[arg(long)]
    pub calibrate: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Semicolon-separated `N:M:k` triples.
    #[arg(long)]
    pub grid: Option<String>,
    /// Timed runs per point.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Steps per timed simulation.
    #[arg(long)]
    pub sim_steps: Option<usize>,
    /// Shortest timing sample in milliseconds; faster calls are repeated
    /// within a sample and averaged.
    #[arg(long)]
    pub min_sample_ms: Option<f64>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: gsn_core::Error| e.to_string())
}

pub fn parse_grid(s: &str) -> Result<Vec<(usize, usize, usize)>, String> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let parts: Vec<usize> = t
                .trim()
                .split(':')
                .map(|p| p.parse().map_err(|_| format!("bad grid entry `{t}`")))
                .collect::<Result<_, _>>()?;
            match parts[..] {
                [n, m, k] => Ok((n, m, k)),
                _ => Err(format!("grid entry `{t}` must be N:M:k")),
            }
        })
        .collect()
}

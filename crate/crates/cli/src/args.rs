//! Command-line syntax.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "octen",
    version,
    about = "Streaming CP decomposition over compressed summaries"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic low-rank tensor and its ground-truth factors.
    Gen(Options),
    /// Stream a tensor batch by batch and report per-batch quality and cost.
    Run(Options),
    /// Repeat runs over a list of values for p, q or shared.
    Sweep(Options),
    /// Pretty-print a checkpoint, tensor, model, report or metadata file.
    Inspect { path: PathBuf },
}

/// Tensor extents, written `50,50,50` or `50x50x50`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Dims, String> {
        let dims = s
            .split([',', 'x', 'X'])
            .map(|d| {
                d.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad extent {d:?} in {s:?}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if dims.len() < 2 {
            return Err(format!("need at least two extents, got {s:?}"));
        }
        Ok(Dims(dims))
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// The parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    P,
    Q,
    Shared,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::P => "p",
            Axis::Q => "q",
            Axis::Shared => "shared",
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Axis, String> {
        <Axis as ValueEnum>::from_str(s, true)
    }
}

/// Every setting of `gen`, `run` and `sweep`. Each one can also be given as
/// `key=value` in the `--config` file (dashes or underscores); command-line
/// flags take precedence. Settings a subcommand does not use are ignored.
#[derive(Args, Clone, Debug, Default)]
pub struct Options {
    /// Flat key=value settings file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Tensor extents of synthetic data, e.g. 50x50x50.
    #[arg(long)]
    pub dims: Option<Dims>,
    /// CP rank of the generator and of the decomposition.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Seed for data generation and for the stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean of the additive Gaussian noise
    #[arg(long, allow_hyphen_values = true)]
    pub noise_mu: Option<f64>,
    /// Standard deviation of the additive Gaussian noise
    #[arg(long)]
    pub noise_sigma: Option<f64>,

    /// Number of replicas.
    #[arg(long)]
    pub p: Option<usize>,
    /// Compressed extent of every mode.
    #[arg(long)]
    pub q: Option<usize>,
    /// Projection columns shared by all replicas.
    #[arg(long)]
    pub shared: Option<usize>,
    /// Temporal slices per batch; the last batch may be shorter.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Growing mode, 1-based (default: the last mode).
    #[arg(long)]
    pub temporal_mode: Option<usize>,
    /// Reject configurations that violate the identifiability bounds.
    #[arg(long)]
    pub enforce_bounds: bool,
    /// Abort when a recovery residual exceeds the warning threshold.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads per batch (0 = automatic).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sweep limit of each replica decomposition
    #[arg(long)]
    pub als_max_iters: Option<usize>,
    /// Stop a replica decomposition once its fit moves less than this
    #[arg(long)]
    pub als_tol: Option<f64>,
    /// Restarts of the first-batch replica decompositions
    #[arg(long)]
    pub als_restarts: Option<usize>,
    /// Also decompose the full tensor with batch CP-ALS for comparison.
    #[arg(long)]
    pub oracle: bool,

    /// Input tensor (dense binary or coordinate text) instead of synthetic data.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Ground-truth model for congruence scores.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write a checkpoint every k batches (0 = only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many batches in total, leaving a resumable checkpoint.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Write zero for all timings, making reports reproducible byte for byte.
    #[arg(long)]
    pub no_timings: bool,

    /// Parameter varied by a sweep.
    #[arg(long)]
    pub axis: Option<Axis>,
    /// Values of the swept parameter.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub values: Option<Vec<usize>>,
    /// Seeds per sweep value, counting up from --seed.
    #[arg(long)]
    pub repeats: Option<usize>,
}

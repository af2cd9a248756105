use std::path::PathBuf;
use std::str::FromStr;

use chibar_core::{MethodSpec, Suite};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "chibar",
    version,
    about = "Chi-bar-squared mixture weights and Monte Carlo checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute mixture weights and write weights.csv.
    Weights(WeightsArgs),
    /// Simulate the limiting statistic and compare it with a mixture.
    Simulate(SimulateArgs),
    /// Run a named grid of simulation cells.
    Validate(ValidateArgs),
}

/// Covariance source as written on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum CovArg {
    Identity,
    Equicorr(f64),
    Mild(u64),
    Strong(u64),
    File(PathBuf),
}

impl FromStr for CovArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (head, arg) = s.split_once(':').unwrap_or((s, ""));
        let seed = |a: &str| {
            a.parse::<u64>()
                .map_err(|_| format!("bad covariance seed `{a}`"))
        };
        match head {
            "identity" if arg.is_empty() => Ok(Self::Identity),
            "equicorr" => arg
                .parse()
                .map(Self::Equicorr)
                .map_err(|_| format!("bad correlation `{arg}`")),
            "mild" => seed(arg).map(Self::Mild),
            "strong" => seed(arg).map(Self::Strong),
            "file" if !arg.is_empty() => Ok(Self::File(PathBuf::from(arg))),
            _ => Err(format!(
                "unknown covariance `{s}` (expected identity, equicorr:RHO, mild:SEED, strong:SEED or file:PATH)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightsChoice {
    /// Orthogonal for diagonal covariances; otherwise exact (m = 0),
    /// the one-nuisance approximation (m = 1) or rank-based weights.
    Auto,
    Method(MethodSpec),
}

impl FromStr for WeightsChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(Self::Auto)
        } else {
            s.parse().map(Self::Method)
        }
    }
}

#[derive(Debug, Args)]
pub struct QmcArgs {
    /// Maximum lattice points per orthant integral.
    #[arg(long, default_value_t = 8192)]
    pub qmc_points: usize,
    /// Independent random shifts per orthant integral.
    #[arg(long, default_value_t = 8)]
    pub qmc_shifts: usize,
    /// Stop refining once the standard error falls below this.
    #[arg(long, default_value_t = 1e-5)]
    pub qmc_tol: f64,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Number of boundary parameters.
    #[arg(long)]
    pub k: usize,
    /// Number of nuisance parameters; the last m coordinates.
    #[arg(long, conflicts_with_all = ["poi", "nuisance"])]
    pub m: Option<usize>,
    /// Comma-separated indices of the parameters of interest.
    #[arg(long, value_delimiter = ',')]
    pub poi: Option<Vec<usize>>,
    /// Comma-separated indices of the nuisance parameters.
    #[arg(long, value_delimiter = ',')]
    pub nuisance: Option<Vec<usize>>,
    /// identity | equicorr:RHO | mild:SEED | strong:SEED | file:PATH
    #[arg(long, default_value = "identity")]
    pub cov: CovArg,
    #[arg(long, env = "CHIBAR_DEFAULT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub qmc: QmcArgs,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// orthogonal | exact | theorem1 | rank:TOL | mc:N
    #[arg(long)]
    pub method: MethodSpec,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Number of Monte Carlo draws.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// auto | orthogonal | exact | theorem1 | rank:TOL | mc:N
    #[arg(long, default_value = "auto")]
    pub weights_method: WeightsChoice,
    /// RNG substreams; changing it changes the draws.
    #[arg(long, default_value_t = 8)]
    pub streams: usize,
    /// Worker threads; never changes the output.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub suite: Suite,
    #[arg(long, env = "CHIBAR_DEFAULT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Random covariances per K in the mild and strong suites.
    #[arg(long, default_value_t = 5)]
    pub cov_seeds: usize,
    /// Eigenvalue threshold of the rank-based weights.
    #[arg(long, default_value_t = 0.1)]
    pub rank_tol: f64,
    #[arg(long, default_value_t = 8)]
    pub streams: usize,
    /// Worker threads; cells run concurrently when above one.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub qmc: QmcArgs,
    #[arg(long)]
    pub out: PathBuf,
}

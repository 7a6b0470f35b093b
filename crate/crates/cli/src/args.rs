use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "ISAC_COOP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "isac-coop", version, about = "Cooperative MIMO-OTFS ISAC localization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check a scenario, print derived quantities.
    Validate(Common),
    /// Synthesise one received frame per BS and dump it with a manifest.
    Simulate(Common),
    /// Two-stage cooperative position estimate with radar maps.
    Estimate(EstimateArgs),
    /// Bounds at each waypoint and PEB maps over the RoI.
    Crlb(Common),
    /// Monte Carlo RMSE against the bounds.
    Rmse(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file, or `@table1` for the bundled scenario.
    pub scenario: String,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads (falls back to ISAC_COOP_THREADS, then all cores).
    #[arg(long)]
    pub threads: Option<usize>,

    /// Overrides the scenario's master seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Subcarrier-offset truncation radius; selects the `truncated` backend
    /// unless `--backend` says otherwise.
    #[arg(long)]
    pub support_halfwidth: Option<usize>,

    /// Shrinks M, N, the trial count and the RoI pixel count by this factor.
    #[arg(long)]
    pub scale: Option<f64>,

    /// Channel backend: windowed (default), truncated or direct.
    #[arg(long)]
    pub backend: Option<String>,

    /// Synthesise echoes without receiver noise.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,

    /// Read receptions written by `simulate` instead of synthesising them.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

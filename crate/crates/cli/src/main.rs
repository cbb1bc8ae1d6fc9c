//! Batch front-end for the single-photon buffer simulator: loads an
//! experiment configuration, runs the simulation and analysis pipelines,
//! and emits plot-ready CSV/JSON with a provenance manifest.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{CliError, OutputFormat};

#[derive(Parser)]
#[command(
    name = "photonbuf",
    version,
    about = "Monte Carlo simulator for a recirculating single-photon buffer",
    after_help = "Exit codes: 0 success, 2 config error, 3 physics-validation error, 4 analysis error."
)]
struct Cli {
    /// Worker threads for the pulse simulation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one acquisition and emit histogram, event and record dumps.
    Simulate(RunArgs),
    /// Run one simulation per storage setting and emit the combined
    /// peak series, loss fit, and g2 table.
    SweepStorage {
        #[command(flatten)]
        run: RunArgs,
        /// Storage settings, e.g. "1..5" or "0,3,14".
        #[arg(long = "k-list")]
        k_list: String,
    },
    /// Check a configuration without simulating.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate g2(0) from an existing event dump (events.csv).
    G2 {
        /// Event dump: CSV with header channel,time_ps.
        #[arg(long)]
        events: PathBuf,
        /// Trigger period in ps.
        #[arg(long)]
        period_ps: f64,
        /// Analysis gate center (phase within the period, ps).
        #[arg(long)]
        gate_center_ps: f64,
        /// Analysis gate half-width in ps.
        #[arg(long, default_value_t = 40.0)]
        gate_half_width_ps: f64,
        /// Number of triggers in the acquisition.
        #[arg(long)]
        triggers: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Fit the per-round-trip loss from an existing peak series
    /// (fig2b_peaks.csv).
    FitLoss {
        /// Peak series: CSV with header k,raw_counts,normalized_amplitude.
        #[arg(long)]
        peaks: PathBuf,
        /// Smallest k included in the fit.
        #[arg(long, default_value_t = 1)]
        min_k: u32,
        /// Weight points by raw counts.
        #[arg(long)]
        weighted: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon_pool(jobs)?;
    }
    match cli.command {
        Command::Simulate(args) => {
            let manifest =
                commands::cmd_simulate(&args.config, args.seed, args.out.as_deref())?;
            println!("wrote {}", manifest.display());
            Ok(())
        }
        Command::SweepStorage { run, k_list } => {
            let ks = commands::parse_k_list(&k_list)?;
            let manifest =
                commands::cmd_sweep_storage(&run.config, &ks, run.seed, run.out.as_deref())?;
            println!("wrote {}", manifest.display());
            Ok(())
        }
        Command::Validate { config } => commands::cmd_validate(&config),
        Command::G2 {
            events,
            period_ps,
            gate_center_ps,
            gate_half_width_ps,
            triggers,
            format,
        } => {
            let out = commands::cmd_g2(
                &events,
                period_ps,
                gate_center_ps,
                gate_half_width_ps,
                triggers,
                format.into(),
            )?;
            print!("{out}");
            Ok(())
        }
        Command::FitLoss {
            peaks,
            min_k,
            weighted,
            format,
        } => {
            let out = commands::cmd_fit_loss(&peaks, min_k, weighted, format.into())?;
            print!("{out}");
            Ok(())
        }
    }
}

fn rayon_pool(jobs: usize) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

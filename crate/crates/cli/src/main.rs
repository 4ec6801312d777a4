//! `framecert` command line: certificates, Walnut cross-checks, Neumann
//! inversion, constant tables and the α-modulation scenario.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{exit, Common};
use config::{AlphaModConfig, RunConfig, SchemaError};

#[derive(Debug, Parser)]
#[command(name = "framecert", version, about = "Invertibility certificates for structured GSI systems")]
struct Cli {
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "FRAMECERT_JOBS")]
    jobs: Option<usize>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Re-run at doubled resolution and report the changes.
    #[arg(long, global = true)]
    double_check: bool,
    /// Seed for generated test signals (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the invertibility certificate.
    Certify,
    /// Compare the Walnut and analysis/synthesis frame operators.
    WalnutCheck,
    /// Solve S u = g by the Neumann iteration.
    Invert {
        /// Input signal (binary layout, or CSV on the configured grid);
        /// a seeded test signal when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the constants of the certificate.
    Constants {
        /// Dimensions to tabulate when no configuration is given.
        #[arg(long = "dim", value_delimiter = ',', default_values_t = [1usize, 2, 3])]
        dims: Vec<usize>,
    },
    /// Run an α-modulation scenario.
    Alphamod,
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<SchemaError>().is_some() {
        return exit::SCHEMA;
    }
    match err.downcast_ref::<framecert::Error>() {
        Some(framecert::Error::OffGridLattice { .. }) => exit::OFF_GRID,
        Some(framecert::Error::ContractionFailed { .. }) => exit::CONTRACTION_FAILED,
        _ => exit::ERROR,
    }
}

fn need_config(cli: &Cli) -> Result<PathBuf, SchemaError> {
    cli.config
        .clone()
        .ok_or_else(|| SchemaError("this command needs --config PATH".into()))
}

fn run(cli: &Cli) -> anyhow::Result<i32> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    let common = Common {
        out: cli.out.clone(),
        double_check: cli.double_check,
        seed: cli.seed,
    };
    match &cli.command {
        Command::Certify => commands::certify(&RunConfig::load(&need_config(cli)?)?, &common),
        Command::WalnutCheck => commands::walnut_check(&RunConfig::load(&need_config(cli)?)?, &common),
        Command::Invert { input } => commands::invert(&RunConfig::load(&need_config(cli)?)?, &common, input.as_deref()),
        Command::Constants { dims } => {
            let loaded = cli.config.as_deref().map(RunConfig::load).transpose()?;
            commands::constants(loaded.as_ref(), dims, &common)
        }
        Command::Alphamod => commands::alphamod(&AlphaModConfig::load(&need_config(cli)?)?, &common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    };
    ExitCode::from(code as u8)
}

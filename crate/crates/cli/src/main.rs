use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qres_cli::commands;
use qres_cli::config::{preset, Config};
use qres_cli::CliError;

/// Batch driver for phase-probe frequency-resolution experiments:
/// simulate datasets, estimate tone frequencies, and compare against
/// Cramer-Rao bounds.
#[derive(Parser)]
#[command(name = "qres", version, max_term_width = 100)]
struct Cli {
    /// Start from a named built-in configuration (fig2 or fig3).
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Config file overlaying the preset (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. The pipeline is single threaded; values above 1 are
    /// accepted for script compatibility and ignored.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Output path. Defaults depend on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured experiment into a QRES dataset [default out: data.qres]
    Simulate,
    /// Resample a dataset and estimate tone frequencies [default out: estimate.csv (+ .json)]
    Estimate {
        /// QRES dataset to estimate from.
        #[arg(long)]
        data: PathBuf,
    },
    /// Cramer-Rao bounds for the configured experiment [default out: fisher.json]
    Fisher,
    /// Averaged periodogram of a dataset [default out: spectrum.csv]
    Spectrum {
        /// QRES dataset to transform.
        #[arg(long)]
        data: PathBuf,
    },
    /// Sweep tone separation, estimating and bounding at each point [default out: scan.csv]
    Scan,
    /// Convert external records to a QRES dataset [default out: ingested.qres]
    Ingest {
        /// File to ingest.
        #[arg(long)]
        input: PathBuf,
        /// Input layout: csv (time_s,outcome[,set_index]) or binary (QRES).
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn effective_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.preset {
        Some(name) => preset(name)?,
        None => Config::default(),
    };
    if let Some(path) = &cli.config {
        let overlay = Config::from_file(path)?;
        cfg = overlay.merged_over(&cfg);
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be >= 1".into()));
    }
    let cfg = effective_config(cli)?;
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::Simulate => commands::run_simulate(&cfg, &out("data.qres")),
        Command::Estimate { data } => commands::run_estimate(data, &cfg, &out("estimate.csv")),
        Command::Fisher => commands::run_fisher(&cfg, &out("fisher.json")),
        Command::Spectrum { data } => commands::run_spectrum(data, &cfg, &out("spectrum.csv")),
        Command::Scan => commands::run_scan(&cfg, &out("scan.csv")),
        Command::Ingest { input, format } => {
            commands::run_ingest(input, format, &cfg, &out("ingested.qres"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};

/// Off-policy evaluation of ranking policies under missing-not-at-random
/// reward observation.
#[derive(Parser)]
#[command(name = "ope-mnar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the alpha sweep described by a JSON config and write
    /// results.csv, summary.json and figure.svg.
    Sweep {
        /// Path to the JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip writing figure.svg.
        #[arg(long)]
        no_chart: bool,
    },
    /// Check the estimators against exact small-instance oracles.
    Verify {
        /// Random enumerable instances per enumeration property.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Single-record datasets for the sampling consistency property.
        #[arg(long, default_value_t = 10_000)]
        mc_seeds: usize,
    },
}

/// Applies the OPE_MNAR_THREADS cap to the worker pool. Without the
/// `parallel` feature the value is validated but has nothing to cap.
fn init_threads() -> anyhow::Result<()> {
    let Some(raw) = std::env::var_os("OPE_MNAR_THREADS") else {
        return Ok(());
    };
    let raw = raw.to_string_lossy();
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .with_context(|| format!("OPE_MNAR_THREADS must be a positive integer, got {raw:?}"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("cannot apply OPE_MNAR_THREADS: worker pool already started")?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(err) = init_threads() {
        eprintln!("error: {err:#}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Sweep {
            config,
            out,
            no_chart,
        } => ope_mnar_cli::cmd_sweep_from_file(&config, out.as_deref(), no_chart).map(|_| true),
        Command::Verify {
            instances,
            mc_seeds,
        } => ope_mnar_cli::cmd_verify(instances, mc_seeds),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

//! Command entry points behind the `ope-mnar` binary, split out as a
//! library so integration tests can drive them directly.

pub mod chart;
pub mod config;
pub mod output;

use std::path::Path;
use std::time::Instant;

use anyhow::Context as _;
use ope_mnar::harness::verify::{run_verification, VerifyConfig};
use ope_mnar::{alpha_sweep, SweepOutput};

pub use config::{load_config, RunConfig};

/// Runs the sweep described by `config` and writes results.csv,
/// summary.json and (unless disabled) figure.svg into its output
/// directory. Returns the in-memory output for callers that want it.
pub fn cmd_sweep(config: &RunConfig) -> anyhow::Result<SweepOutput> {
    let out_dir = config.output_dir.as_path();
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    if config.verbosity > 0 {
        eprintln!(
            "sweep: {} alphas x {} seeds, n = {}, truth from {} Monte Carlo contexts",
            config.alphas.len(),
            config.n_seeds,
            config.n,
            config.n_mc,
        );
    }
    let started = Instant::now();
    let output = alpha_sweep(&config.sweep())?;
    if config.verbosity > 0 {
        eprintln!("sweep finished in {:.1}s", started.elapsed().as_secs_f64());
    }

    let csv_path = out_dir.join("results.csv");
    output::write_results_csv(&csv_path, &output.summary)?;
    let json_path = out_dir.join("summary.json");
    output::write_summary_json(&json_path, config, &output.details)?;
    if config.verbosity > 0 {
        eprintln!("wrote {}", csv_path.display());
        eprintln!("wrote {}", json_path.display());
    }
    if config.chart {
        let svg_path = out_dir.join("figure.svg");
        chart::write_figure_svg(&svg_path, &output.summary)?;
        if config.verbosity > 0 {
            eprintln!("wrote {}", svg_path.display());
        }
    }
    Ok(output)
}

/// Loads a config file, applies command line overrides, and runs the sweep.
pub fn cmd_sweep_from_file(
    config_path: &Path,
    out_override: Option<&Path>,
    no_chart: bool,
) -> anyhow::Result<SweepOutput> {
    let mut config = load_config(config_path)?;
    if let Some(dir) = out_override {
        config.output_dir = dir.to_path_buf();
    }
    if no_chart {
        config.chart = false;
    }
    cmd_sweep(&config)
}

/// Checks the estimators against exact small-instance oracles and prints
/// one line per property. Returns whether every property passed.
pub fn cmd_verify(instances: usize, mc_seeds: usize) -> anyhow::Result<bool> {
    let cfg = VerifyConfig {
        n_instances: instances,
        mc_seeds,
        ..VerifyConfig::default()
    };
    let reports = run_verification(&cfg)?;
    let mut all_passed = true;
    for report in &reports {
        all_passed &= report.passed;
        println!(
            "{}  {}  max deviation {:.3e}  ({})",
            if report.passed { "PASS" } else { "FAIL" },
            report.name,
            report.max_deviation,
            report.detail,
        );
    }
    println!(
        "{}: {} of {} properties passed",
        if all_passed { "ok" } else { "FAILED" },
        reports.iter().filter(|r| r.passed).count(),
        reports.len(),
    );
    Ok(all_passed)
}

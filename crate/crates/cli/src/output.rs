//! Sweep artifacts: the results table (CSV) and the run summary (JSON).

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use anyhow::Context as _;
use ope_mnar::{AlphaSummary, SweepSummary};
use serde::Serialize;

use crate::config::RunConfig;

/// Writes `summary` as CSV with one row per (alpha, estimator) pair.
/// Columns follow the field order of [`ope_mnar::SweepRow`]. Floats use
/// the shortest round-trip decimal form, so identical results produce
/// byte-identical files.
pub fn write_results_csv(path: &Path, summary: &SweepSummary) -> anyhow::Result<()> {
    let file =
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    for row in &summary.rows {
        writer
            .serialize(row)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    writer
        .flush()
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Reads a results table back. Inverse of [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> anyhow::Result<SweepSummary> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.with_context(|| format!("malformed row in {}", path.display()))?);
    }
    Ok(SweepSummary { rows })
}

#[derive(Debug, Serialize)]
struct SummaryDocument<'a> {
    config: &'a RunConfig,
    results: &'a [AlphaSummary],
}

/// Writes the JSON summary: the fully resolved run config plus per-alpha
/// detail, including standard errors for the truth and each estimator.
pub fn write_summary_json(
    path: &Path,
    config: &RunConfig,
    results: &[AlphaSummary],
) -> anyhow::Result<()> {
    let file =
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &SummaryDocument { config, results })
        .with_context(|| format!("cannot write {}", path.display()))?;
    writeln!(writer).with_context(|| format!("cannot write {}", path.display()))?;
    writer
        .flush()
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

//! Metrics records and their on-disk forms: JSON lines for per-epoch
//! training metrics, CSV for ensemble grids.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation snapshot. Serialized as a single JSON object per line.
/// Wall time is kept in memory for reporting but never serialized, so the
/// files from two identical runs match byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    /// Global optimizer steps completed when the snapshot was taken.
    pub step: usize,
    /// Which nodes were scored, e.g. "val" or "test".
    pub split: String,
    pub accuracy: f64,
    pub loss_sup: f64,
    pub loss_con: f64,
    /// Confidence-masking threshold at the snapshot's step.
    pub eta: f64,
    #[serde(skip_serializing, default)]
    pub wall_time: f64,
}

/// Writes one JSON object per line, in order.
pub fn write_metrics_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Format(format!("metrics record: {e}")))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("metrics line {}: {e}", idx + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// One ensemble-grid cell aggregated over repeated runs.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub views: usize,
    pub model_count: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

/// Writes grid rows as CSV with a fixed header.
pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "views,model_count,accuracy_mean,accuracy_std")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.views, row.model_count, row.accuracy_mean, row.accuracy_std
        )?;
    }
    out.flush()?;
    Ok(())
}

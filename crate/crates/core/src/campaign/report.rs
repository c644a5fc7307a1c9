use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SweepReport, SweepSpec};
use crate::engine::EngineOptions;
use crate::error::{Error, Result};
use crate::io::model_to_bytes;
use crate::model::ModelGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// SHA-256 of the model's NNFI encoding.
    pub model_hash: String,
    pub sweep: SweepSpec,
    pub seed: u64,
    pub engine: EngineOptions,
}

impl ReportMetadata {
    pub fn new(model: &ModelGraph, sweep: &SweepSpec, engine: EngineOptions) -> Result<Self> {
        let digest = Sha256::digest(model_to_bytes(model)?);
        Ok(Self {
            model_hash: hex::encode(digest),
            sweep: sweep.clone(),
            seed: sweep.seed,
            engine,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReportFile {
    pub metadata: ReportMetadata,
    pub report: SweepReport,
}

fn csv_bytes(report: &SweepReport) -> Result<Vec<u8>> {
    let classes = report
        .entries
        .first()
        .map_or(crate::model::NUM_CLASSES, |e| e.label_histogram.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidSweep(format!("csv encoding: {e}"));
    let mut header = vec![
        "index".to_string(),
        "accuracy".to_string(),
        "memory_effect_rate".to_string(),
    ];
    header.extend((0..classes).map(|i| format!("hist_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for e in &report.entries {
        let mut row = vec![
            e.index.to_string(),
            e.accuracy.to_string(),
            e.memory_effect_rate.to_string(),
        ];
        row.extend(e.label_histogram.iter().map(u64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidSweep(format!("csv encoding: {e}")))
}

/// Writes the report as CSV (one row per index) or JSON (with metadata).
pub fn write_report(
    report: &SweepReport,
    metadata: &ReportMetadata,
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    let bytes = match format {
        ReportFormat::Csv => csv_bytes(report)?,
        ReportFormat::Json => {
            let file = SweepReportFile {
                metadata: metadata.clone(),
                report: report.clone(),
            };
            let mut v = serde_json::to_vec_pretty(&file).map_err(|source| Error::Json {
                context: "encoding report".into(),
                source,
            })?;
            v.push(b'\n');
            v
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: &Path) -> Result<SweepReportFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        context: format!("parsing {}", path.display()),
        source,
    })
}

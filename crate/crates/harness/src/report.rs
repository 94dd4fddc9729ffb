use std::path::{Path, PathBuf};

use dynattack_core::cost::{Aggregate, CostReport, InflationReport, PathDescriptor};
use dynattack_core::defense::{DefenseVerdict, Detector};
use dynattack_core::models::Behavior;
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;
use crate::HarnessError;

/// One CSV line: the mean outcome of a scenario at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario_id: String,
    pub behavior: Behavior,
    pub attack: String,
    pub mode: String,
    /// Perturbation budget, or poisoning strength for poison attacks.
    pub epsilon: f64,
    pub flops_pct: f64,
    pub latency_pct: f64,
    pub energy_pct: f64,
    /// Empty when no defense is deployed.
    pub detection_rate: Option<f64>,
    pub benign_quality: f64,
    pub adv_quality: f64,
    pub seed: u64,
}

/// Everything measured for one evaluation input at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub epsilon: f64,
    pub index: usize,
    /// Undefended benign cost against the cost actually served for the adversarial input.
    pub inflation: InflationReport,
    /// Same, with the defense removed. Present only when a defense changes serving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefended_inflation: Option<InflationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defended_benign: Option<CostReport>,
    /// Paths taken by the served benign and adversarial inferences.
    pub benign_path: PathDescriptor,
    pub adv_path: PathDescriptor,
    pub constraint_satisfied: bool,
    pub queries_used: usize,
    pub edits: usize,
    pub benign_quality: f64,
    pub adv_quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benign_verdict: Option<DefenseVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv_verdict: Option<DefenseVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benign_breached: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv_breached: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefended: Option<Aggregate>,
    pub mean_benign_flops: f64,
    pub mean_adversarial_flops: f64,
    pub mean_benign_iterations: f64,
    pub mean_adversarial_iterations: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_undefended_adversarial_iterations: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub false_positive_rate: Option<f64>,
    pub benign_quality: f64,
    pub adv_quality: f64,
    pub constraint_violations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<Detector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub scenario_id: String,
    pub behavior: Behavior,
    pub attack: String,
    pub mode: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub rows: Vec<Row>,
    pub summaries: Vec<EpsilonSummary>,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

fn io(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

pub fn rows_to_csv(rows: &[Row]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(io)?;
    }
    w.into_inner().map_err(io)
}

pub const CSV_HEADER: [&str; 12] = [
    "scenario_id",
    "behavior",
    "attack",
    "mode",
    "epsilon",
    "flops_pct",
    "latency_pct",
    "energy_pct",
    "detection_rate",
    "benign_quality",
    "adv_quality",
    "seed",
];

impl RunReport {
    pub fn to_bytes(&self, format: ReportFormat) -> Result<Vec<u8>, HarnessError> {
        match format {
            ReportFormat::Csv => rows_to_csv(&self.rows),
            ReportFormat::Json => {
                let mut b = serde_json::to_vec_pretty(self).map_err(io)?;
                b.push(b'\n');
                Ok(b)
            }
        }
    }
}

/// Writes `<dir>/<scenario id>.<ext>` and returns its path.
pub fn emit_report(report: &RunReport, format: ReportFormat, dir: &Path) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("{}.{}", report.scenario_id, format.extension()));
    std::fs::write(&path, report.to_bytes(format)?).map_err(|e| io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<Row>, HarnessError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(io)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Validation(format!(
            "unexpected csv header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| HarnessError::Validation(format!("bad csv row: {e}"))))
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<Row>, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| io(format!("{}: {e}", path.display())))?;
    parse_csv(&bytes).map_err(|e| e.context(&path.display().to_string()))
}

/// Concatenates rows of several CSV reports under one header.
pub fn merge_csv(paths: &[PathBuf]) -> Result<Vec<u8>, HarnessError> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_csv(p)?);
    }
    rows_to_csv(&rows)
}

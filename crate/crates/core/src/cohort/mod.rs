//! Cohort handling: manifests, hospital-stratified folds, experiment runs,
//! synthetic phantoms and report tables.

mod config;
mod experiment;
mod folds;
mod manifest;
mod phantom;
mod report;

pub use config::{ExperimentConfig, PredictionSource, ReportFormat};
pub use experiment::{
    run_experiment, summarize, CohortRow, MetricReport, PatientResult, PatientScore, Protocol,
};
pub use folds::{assign_folds, FoldAssignment, FoldPlan, Split};
pub use manifest::{load_manifest, CohortManifest, HospitalCounts, PatientRecord, PREDICTION_SLOTS};
pub use phantom::{generate_phantom_cohort, PhantomCohort, PhantomParams, PhantomTruth};
pub use report::{
    emit_report, format_cell, read_patients_csv, render_cohort_csv, render_markdown, render_patients_csv,
    ReportFiles,
};

use crate::error::{Error, Result};

/// Parse a flat `key = value` text. Blank lines and `#` comments are skipped.
pub(crate) fn parse_key_values(text: &str, err: fn(String) -> Error) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("line {}: expected 'key = value', got '{line}'", n + 1)))?;
        let k = k.trim().to_string();
        if k.is_empty() {
            return Err(err(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(err(format!("line {}: duplicate key '{k}'", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

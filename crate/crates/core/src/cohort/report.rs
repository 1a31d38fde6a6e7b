use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::ReportFormat;
use super::experiment::{CohortRow, MetricReport, PatientResult, PatientScore};
use super::folds::Split;
use crate::error::{Error, Result};
use crate::metrics::{Detection, PoolSummary};

const PATIENT_COLUMNS: [&str; 9] = [
    "patient_id",
    "hospital",
    "fold",
    "gt_volume_ml",
    "pred_volume_ml",
    "dice",
    "detection",
    "classification",
    "error",
];

/// Two-decimal cell: `mean±std`, a bare value for a single entry, or
/// `n/a (n=0)` when nothing was defined.
pub fn format_cell(summary: &PoolSummary, scale: f64) -> String {
    match summary.stat {
        None => "n/a (n=0)".to_string(),
        Some(s) if s.n == 1 => format!("{:.2}", s.mean * scale),
        Some(s) => format!("{:.2}±{:.2}", s.mean * scale, s.std * scale),
    }
}

fn pct(summary: &PoolSummary) -> String {
    format_cell(summary, 100.0)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Manifest(e.to_string()))
}

/// One row per patient, floats at full round-trip precision.
pub fn render_patients_csv(patients: &[PatientResult]) -> Result<String> {
    csv_string(|w| {
        w.write_record(PATIENT_COLUMNS)?;
        for p in patients {
            let s = p.score;
            w.write_record([
                p.patient_id.clone(),
                p.hospital.clone(),
                p.split.to_string(),
                opt(s.map(|s| s.gt_volume_ml)),
                opt(s.map(|s| s.pred_volume_ml)),
                opt(s.and_then(|s| s.dice)),
                s.map(|s| s.detection.to_string()).unwrap_or_default(),
                s.map(|s| s.classification.to_string()).unwrap_or_default(),
                p.error.clone().unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

pub fn read_patients_csv(text: &str) -> Result<Vec<PatientResult>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().ne(PATIENT_COLUMNS) {
        return Err(Error::Manifest(format!("unexpected patient table header: {:?}", headers)));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let bad = |what: &str| Error::Manifest(format!("line {line}: bad {what}"));
        let float = |i: usize, what: &str| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(what))
            }
        };
        let split: Split = rec[2].parse().map_err(|_| bad("fold"))?;
        let error = Some(rec[8].to_string()).filter(|s| !s.is_empty());
        let score = match (float(3, "gt_volume_ml")?, float(4, "pred_volume_ml")?) {
            (Some(gt_volume_ml), Some(pred_volume_ml)) => Some(PatientScore {
                gt_volume_ml,
                pred_volume_ml,
                dice: float(5, "dice")?,
                detection: rec[6].parse::<Detection>().map_err(|_| bad("detection"))?,
                classification: rec[7].parse::<Detection>().map_err(|_| bad("classification"))?,
            }),
            (None, None) => None,
            _ => return Err(bad("volume pair")),
        };
        out.push(PatientResult {
            patient_id: rec[0].to_string(),
            hospital: rec[1].to_string(),
            split,
            score,
            error,
        });
    }
    Ok(out)
}

pub fn render_cohort_csv(rows: &[CohortRow]) -> Result<String> {
    csv_string(|w| {
        w.write_record([
            "protocol", "scored", "failed", "groups", "DSC-P", "DSC-TP", "Recall", "Precision", "F1", "Sensitivity",
            "Specificity", "bAcc",
        ])?;
        for r in rows {
            w.write_record([
                r.protocol.to_string(),
                r.scored.to_string(),
                r.failed.to_string(),
                r.groups.to_string(),
                pct(&r.dsc_p),
                pct(&r.dsc_tp),
                pct(&r.recall),
                pct(&r.precision),
                pct(&r.f1),
                pct(&r.sensitivity),
                pct(&r.specificity),
                pct(&r.bacc),
            ])?;
        }
        Ok(())
    })
}

pub fn render_markdown(report: &MetricReport) -> String {
    let mut s = format!("# Residual tumor evaluation: {}\n\n", report.label);
    s.push_str("Values in %. Validation rows pool Dice over patients and patient-wise rates over folds (mean±std).\n\n");

    s.push_str("## Segmentation and detection\n\n");
    s.push_str("| Protocol | Patients | DSC-P | DSC-TP | Recall | Precision | F1 |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for r in &report.rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.protocol,
            r.scored,
            pct(&r.dsc_p),
            pct(&r.dsc_tp),
            pct(&r.recall),
            pct(&r.precision),
            pct(&r.f1)
        ));
    }

    s.push_str("\n## GTR vs residual tumor classification\n\n");
    s.push_str("| Protocol | TP | TN | FP | FN | Sensitivity | Specificity | bAcc |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &report.rows {
        let c = r.classification_counts;
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.protocol,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            pct(&r.sensitivity),
            pct(&r.specificity),
            pct(&r.bacc)
        ));
    }

    s.push_str("\n## Hospitals (ground truth)\n\n");
    s.push_str("| Hospital | Patients | RT | GTR | RT ratio |\n|---|---|---|---|---|\n");
    let mut per_hospital: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in &report.patients {
        if let Some(score) = p.score {
            let e = per_hospital.entry(&p.hospital).or_default();
            match score.classification {
                Detection::Tp | Detection::Fn => e.0 += 1,
                Detection::Tn | Detection::Fp => e.1 += 1,
            }
        }
    }
    for (h, (rt, gtr)) in per_hospital {
        s.push_str(&format!(
            "| {h} | {} | {rt} | {gtr} | {:.1} |\n",
            rt + gtr,
            100.0 * rt as f64 / (rt + gtr) as f64
        ));
    }

    let failures: Vec<&PatientResult> = report.patients.iter().filter(|p| p.error.is_some()).collect();
    if !failures.is_empty() {
        s.push_str("\n## Failed patients\n\n");
        for p in failures {
            s.push_str(&format!("- {}: {}\n", p.patient_id, p.error.as_deref().unwrap_or("")));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportFiles {
    pub patients_csv: Option<PathBuf>,
    pub cohort_csv: Option<PathBuf>,
    pub markdown: Option<PathBuf>,
}

/// Write `patients.csv` and `cohort.csv` (csv) and `report.md` (markdown).
pub fn emit_report(report: &MetricReport, dir: impl AsRef<Path>, formats: &[ReportFormat]) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = ReportFiles::default();
    if formats.contains(&ReportFormat::Csv) {
        let p = dir.join("patients.csv");
        std::fs::write(&p, render_patients_csv(&report.patients)?)?;
        files.patients_csv = Some(p);
        let c = dir.join("cohort.csv");
        std::fs::write(&c, render_cohort_csv(&report.rows)?)?;
        files.cohort_csv = Some(c);
    }
    if formats.contains(&ReportFormat::Markdown) {
        let m = dir.join("report.md");
        std::fs::write(&m, render_markdown(report))?;
        files.markdown = Some(m);
    }
    Ok(files)
}

impl MetricReport {
    /// Rebuild a report from a per-patient table.
    pub fn from_patients(label: impl Into<String>, patients: Vec<PatientResult>) -> Self {
        let rows = super::experiment::summarize(&patients);
        Self { label: label.into(), patients, rows }
    }
}

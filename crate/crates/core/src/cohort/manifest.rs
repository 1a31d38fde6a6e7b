use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Sequence;

/// Number of per-fold prediction columns (`pred_0` .. `pred_4`).
pub const PREDICTION_SLOTS: usize = 5;

const REQUIRED: [&str; 2] = ["patient_id", "hospital"];
const OPTIONAL: [&str; 10] = [
    "t1ce",
    "t1w",
    "flair",
    "pre_t1ce",
    "pre_label",
    "gt",
    "brain_mask",
    "fold",
    "gt_volume_ml",
    "acquisition_delay",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatientRecord {
    pub patient_id: String,
    pub hospital: String,
    pub t1ce: Option<PathBuf>,
    pub t1w: Option<PathBuf>,
    pub flair: Option<PathBuf>,
    pub pre_t1ce: Option<PathBuf>,
    pub pre_label: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub brain_mask: Option<PathBuf>,
    pub predictions: [Option<PathBuf>; PREDICTION_SLOTS],
    /// Fold label from the manifest itself: a fold number or `test`.
    pub fold: Option<String>,
    /// Declared ground-truth residual volume, if the manifest carries one.
    pub gt_volume_ml: Option<f64>,
    /// Metadata only.
    pub acquisition_delay: Option<String>,
}

impl PatientRecord {
    pub fn sequence_path(&self, seq: Sequence) -> Option<&Path> {
        match seq {
            Sequence::PostT1wCe => self.t1ce.as_deref(),
            Sequence::PostT1w => self.t1w.as_deref(),
            Sequence::PostFlair => self.flair.as_deref(),
            Sequence::PreT1wCe => self.pre_t1ce.as_deref(),
            Sequence::PreLabel => self.pre_label.as_deref(),
        }
    }

    pub fn available_predictions(&self) -> impl Iterator<Item = (usize, &Path)> {
        self.predictions.iter().enumerate().filter_map(|(k, p)| p.as_deref().map(|p| (k, p)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct HospitalCounts {
    pub patients: usize,
    pub rt: usize,
    pub gtr: usize,
    /// Patients without a declared volume.
    pub unknown: usize,
}

impl HospitalCounts {
    /// Percentage of residual-tumor patients among those with a known volume.
    pub fn rt_ratio_percent(&self) -> Option<f64> {
        let known = self.rt + self.gtr;
        (known > 0).then(|| 100.0 * self.rt as f64 / known as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub root: PathBuf,
    pub patients: Vec<PatientRecord>,
    pub warnings: Vec<String>,
}

impl CohortManifest {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Hospitals in order of first appearance.
    pub fn hospitals(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.patients
            .iter()
            .map(|p| p.hospital.as_str())
            .filter(|h| seen.insert(*h))
            .collect()
    }

    /// RT/GTR split per hospital from the declared volumes.
    pub fn hospital_counts(&self, cutoff_ml: f64) -> Vec<(String, HospitalCounts)> {
        self.hospitals()
            .into_iter()
            .map(|h| {
                let mut c = HospitalCounts::default();
                for p in self.patients.iter().filter(|p| p.hospital == h) {
                    c.patients += 1;
                    match p.gt_volume_ml {
                        Some(v) if v >= cutoff_ml => c.rt += 1,
                        Some(_) => c.gtr += 1,
                        None => c.unknown += 1,
                    }
                }
                (h.to_string(), c)
            })
            .collect()
    }
}

/// Read a patient manifest CSV. Relative paths resolve against the manifest's
/// directory; empty cells mean "absent".
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &root)
}

pub(crate) fn parse_manifest(text: &str, root: &Path) -> Result<CohortManifest> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    for req in REQUIRED {
        if col(req).is_none() {
            return Err(Error::Manifest(format!("missing required column '{req}'")));
        }
    }
    let mut warnings = Vec::new();
    for h in headers.iter() {
        let known = REQUIRED.contains(&h)
            || OPTIONAL.contains(&h)
            || h.strip_prefix("pred_").and_then(|k| k.parse::<usize>().ok()).is_some_and(|k| k < PREDICTION_SLOTS);
        if !known {
            warnings.push(format!("ignoring unknown column '{h}'"));
        }
    }

    let mut patients = Vec::new();
    let mut ids = HashSet::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let cell = |name: &str| col(name).and_then(|i| rec.get(i)).filter(|s| !s.is_empty());
        let file = |name: &str| cell(name).map(|s| root.join(s));
        let patient_id = cell("patient_id")
            .ok_or_else(|| Error::Manifest(format!("line {line}: empty patient_id")))?
            .to_string();
        let hospital = cell("hospital")
            .ok_or_else(|| Error::Manifest(format!("line {line}: empty hospital for '{patient_id}'")))?
            .to_string();
        if !ids.insert(patient_id.clone()) {
            return Err(Error::Manifest(format!("line {line}: duplicate patient_id '{patient_id}'")));
        }
        let gt_volume_ml = cell("gt_volume_ml")
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| Error::Manifest(format!("line {line}: bad gt_volume_ml '{s}'")))
            })
            .transpose()?;
        patients.push(PatientRecord {
            t1ce: file("t1ce"),
            t1w: file("t1w"),
            flair: file("flair"),
            pre_t1ce: file("pre_t1ce"),
            pre_label: file("pre_label"),
            gt: file("gt"),
            brain_mask: file("brain_mask"),
            predictions: std::array::from_fn(|k| file(&format!("pred_{k}"))),
            fold: cell("fold").map(str::to_string),
            gt_volume_ml,
            acquisition_delay: cell("acquisition_delay").map(str::to_string),
            patient_id,
            hospital,
        });
    }
    if patients.is_empty() {
        warnings.push("manifest lists no patients".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CohortManifest { root: root.to_path_buf(), patients, warnings })
}

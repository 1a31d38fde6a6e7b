use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, PredictionSource};
use super::folds::{FoldAssignment, Split};
use super::manifest::{CohortManifest, PatientRecord};
use crate::baseline::baseline_segment;
use crate::error::{Error, Result};
use crate::grid::{resample_to_reference, Interpolation, VoxelGrid};
use crate::metrics::{
    detection_metrics, dice, group_dice, patient_detection_status, pool_defined, ConfusionCounts, Detection,
    DetectionParams, DetectionRule, DetectionStatus, PoolSummary,
};
use crate::nifti::{read_mask, read_probability, read_volume};
use crate::post::{ensemble_average, run_postprocess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Protocol {
    Validation,
    Test,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Validation => "validation",
            Protocol::Test => "test",
        })
    }
}

impl Split {
    pub fn protocol(self) -> Protocol {
        match self {
            Split::Validation(_) => Protocol::Validation,
            Split::Test => Protocol::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatientScore {
    pub gt_volume_ml: f64,
    pub pred_volume_ml: f64,
    pub dice: Option<f64>,
    /// Status under the configured detection rule.
    pub detection: Detection,
    /// GTR-vs-RT status; TP also needs the Dice floor.
    pub classification: Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientResult {
    pub patient_id: String,
    pub hospital: String,
    pub split: Split,
    pub score: Option<PatientScore>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortRow {
    pub protocol: Protocol,
    pub scored: usize,
    pub failed: usize,
    /// Groups pooled for the patient-wise rates (folds, or 1 for test).
    pub groups: usize,
    pub dsc_p: PoolSummary,
    pub dsc_tp: PoolSummary,
    pub recall: PoolSummary,
    pub precision: PoolSummary,
    pub f1: PoolSummary,
    pub sensitivity: PoolSummary,
    pub specificity: PoolSummary,
    pub bacc: PoolSummary,
    pub detection_counts: ConfusionCounts,
    pub classification_counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub label: String,
    pub patients: Vec<PatientResult>,
    pub rows: Vec<CohortRow>,
}

/// Score every patient and aggregate per protocol. Output order follows the
/// manifest regardless of `workers`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    cohort: &CohortManifest,
    assignment: &FoldAssignment,
    workers: usize,
) -> Result<MetricReport> {
    cfg.validate()?;
    if assignment.splits.len() != cohort.len() {
        return Err(Error::Plan(format!(
            "{} fold labels for {} patients",
            assignment.splits.len(),
            cohort.len()
        )));
    }
    if cohort.is_empty() {
        return Err(Error::Experiment("cohort has no patients".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Experiment(format!("worker pool: {e}")))?;
    let patients: Vec<PatientResult> = pool.install(|| {
        cohort
            .patients
            .par_iter()
            .zip(assignment.splits.par_iter())
            .map(|(rec, &split)| {
                let (score, error) = match score_patient(rec, split, cfg) {
                    Ok(s) => (Some(s), None),
                    Err(e) => {
                        log::warn!("patient {}: {e}", rec.patient_id);
                        (None, Some(format!("{}: {e}", e.kind())))
                    }
                };
                PatientResult {
                    patient_id: rec.patient_id.clone(),
                    hospital: rec.hospital.clone(),
                    split,
                    score,
                    error,
                }
            })
            .collect()
    });
    if patients.iter().all(|p| p.score.is_none()) {
        let first = patients[0].error.clone().unwrap_or_default();
        return Err(Error::Experiment(format!("all {} patients failed; first: {first}", patients.len())));
    }
    let rows = summarize(&patients);
    Ok(MetricReport { label: format!("configuration {}", cfg.configuration), patients, rows })
}

fn require<'a>(path: Option<&'a Path>, what: &str) -> Result<&'a Path> {
    let p = path.ok_or_else(|| Error::Experiment(format!("no {what} listed")))?;
    if !p.exists() {
        return Err(Error::Experiment(format!("{what} not found: {}", p.display())));
    }
    Ok(p)
}

fn prediction(rec: &PatientRecord, split: Split, cfg: &ExperimentConfig) -> Result<VoxelGrid> {
    match cfg.source {
        PredictionSource::Baseline => {
            let t1ce = read_volume(require(rec.t1ce.as_deref(), "t1ce")?)?;
            let t1w = read_volume(require(rec.t1w.as_deref(), "t1w")?)?;
            let brain = read_mask(require(rec.brain_mask.as_deref(), "brain_mask")?)?;
            Ok(baseline_segment(&t1ce, &t1w, &brain)?.prob)
        }
        PredictionSource::External => {
            let available: Vec<(usize, &Path)> = rec.available_predictions().collect();
            if available.is_empty() {
                return Err(Error::Experiment("no prediction listed".into()));
            }
            match split {
                Split::Validation(k) => {
                    let path = available.iter().find(|(slot, _)| *slot == k as usize).unwrap_or(&available[0]).1;
                    read_probability(require(Some(path), "prediction")?)
                }
                Split::Test => {
                    let maps = available
                        .iter()
                        .map(|(_, p)| read_probability(require(Some(p), "prediction")?))
                        .collect::<Result<Vec<_>>>()?;
                    ensemble_average(&maps)
                }
            }
        }
    }
}

fn score_patient(rec: &PatientRecord, split: Split, cfg: &ExperimentConfig) -> Result<PatientScore> {
    for seq in cfg.configuration.sequences() {
        require(rec.sequence_path(seq), seq.name())?;
    }
    let gt = read_mask(require(rec.gt.as_deref(), "gt")?)?;
    let mut prob = prediction(rec, split, cfg)?;
    if !prob.geometry().same_space(gt.geometry()) {
        log::warn!("patient {}: prediction resampled onto the annotation grid", rec.patient_id);
        prob = resample_to_reference(&prob, gt.geometry(), Interpolation::Trilinear)?;
    }
    let outcome = run_postprocess(&prob, &cfg.post)?;
    let gt_volume_ml = gt.volume_ml();
    let pred_volume_ml = outcome.verdict.residual_volume_ml;
    let d = dice(&gt, &outcome.mask)?;
    let detection = patient_detection_status(gt_volume_ml, pred_volume_ml, d, &cfg.detection).status;
    let classify = DetectionParams { rule: DetectionRule::DiceFloor, ..cfg.detection };
    let classification = patient_detection_status(gt_volume_ml, pred_volume_ml, d, &classify).status;
    Ok(PatientScore { gt_volume_ml, pred_volume_ml, dice: d, detection, classification })
}

/// Cohort rows from per-patient results alone.
///
/// Dice groups pool over patients; recall, precision, F1, sensitivity,
/// specificity and bAcc are computed per fold and pooled across folds.
pub fn summarize(patients: &[PatientResult]) -> Vec<CohortRow> {
    [Protocol::Validation, Protocol::Test]
        .into_iter()
        .filter_map(|protocol| {
            let members: Vec<&PatientResult> = patients.iter().filter(|p| p.split.protocol() == protocol).collect();
            (!members.is_empty()).then(|| summarize_protocol(protocol, &members))
        })
        .collect()
}

fn summarize_protocol(protocol: Protocol, members: &[&PatientResult]) -> CohortRow {
    let scored: Vec<(Split, PatientScore)> = members.iter().filter_map(|p| p.score.map(|s| (p.split, s))).collect();
    let statuses: Vec<DetectionStatus> = scored
        .iter()
        .map(|(_, s)| DetectionStatus {
            status: s.detection,
            gt_volume_ml: s.gt_volume_ml,
            pred_volume_ml: s.pred_volume_ml,
            dice: s.dice,
        })
        .collect();
    let groups_dice = group_dice(&statuses);

    let mut per_group: BTreeMap<Split, (ConfusionCounts, ConfusionCounts)> = BTreeMap::new();
    for (split, s) in &scored {
        let entry = per_group.entry(*split).or_default();
        entry.0.add(s.detection);
        entry.1.add(s.classification);
    }
    let det: Vec<_> = per_group.values().map(|(d, _)| detection_metrics(d)).collect();
    let cls: Vec<_> = per_group.values().map(|(_, c)| detection_metrics(c)).collect();
    let total = |pick: fn(&(ConfusionCounts, ConfusionCounts)) -> &ConfusionCounts| {
        per_group.values().fold(ConfusionCounts::default(), |acc, g| {
            let c = pick(g);
            ConfusionCounts::new(acc.tp + c.tp, acc.tn + c.tn, acc.fp + c.fp, acc.fn_ + c.fn_)
        })
    };

    CohortRow {
        protocol,
        scored: scored.len(),
        failed: members.len() - scored.len(),
        groups: per_group.len(),
        dsc_p: groups_dice.positive,
        dsc_tp: groups_dice.true_positive,
        recall: pool_defined(det.iter().map(|m| m.recall)),
        precision: pool_defined(det.iter().map(|m| m.precision)),
        f1: pool_defined(det.iter().map(|m| m.f1)),
        sensitivity: pool_defined(cls.iter().map(|m| m.recall)),
        specificity: pool_defined(cls.iter().map(|m| m.specificity)),
        bacc: pool_defined(cls.iter().map(|m| m.bacc)),
        detection_counts: total(|g| &g.0),
        classification_counts: total(|g| &g.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient(id: usize, split: Split, gt: f64, pred: f64, d: Option<f64>) -> PatientResult {
        let params = DetectionParams::default();
        let s = patient_detection_status(gt, pred, d, &params).status;
        PatientResult {
            patient_id: format!("p{id}"),
            hospital: "H".into(),
            split,
            score: Some(PatientScore { gt_volume_ml: gt, pred_volume_ml: pred, dice: d, detection: s, classification: s }),
            error: None,
        }
    }

    #[test]
    fn perfect_cohort() {
        let ps: Vec<_> = (0..10)
            .map(|i| {
                let rt = i % 2 == 0;
                let v = if rt { 1.0 } else { 0.0 };
                patient(i, Split::Validation((i % 3) as u32), v, v, rt.then_some(1.0))
            })
            .collect();
        let rows = summarize(&ps);
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.dsc_p.stat.unwrap().mean, 1.0);
        assert_eq!(r.dsc_tp.stat.unwrap().mean, 1.0);
        assert_eq!(r.sensitivity.stat.unwrap().mean, 1.0);
        assert_eq!(r.specificity.stat.unwrap().mean, 1.0);
        assert_eq!(r.bacc.stat.unwrap(), crate::metrics::PooledStat { mean: 1.0, std: 0.0, n: 3 });
    }

    #[test]
    fn empty_predictions_cohort() {
        let ps: Vec<_> = (0..10)
            .map(|i| {
                let gt = if i < 6 { 1.0 } else { 0.0 };
                patient(i, Split::Test, gt, 0.0, (i < 6).then_some(0.0))
            })
            .collect();
        let r = &summarize(&ps)[0];
        assert_eq!(r.protocol, Protocol::Test);
        assert_eq!(r.sensitivity.stat.unwrap().mean, 0.0);
        assert_eq!(r.specificity.stat.unwrap().mean, 1.0);
        assert_eq!(r.bacc.stat.unwrap().mean, 0.5);
        assert_eq!(r.bacc.stat.unwrap().n, 1);
        assert_eq!(r.precision.stat, None);
        assert_eq!(r.dsc_tp.n(), 0);
        assert_eq!(r.classification_counts, ConfusionCounts::new(0, 4, 0, 6));
    }

    #[test]
    fn failed_patients_are_counted_not_scored() {
        let mut ps = vec![patient(0, Split::Test, 1.0, 1.0, Some(0.9))];
        ps.push(PatientResult {
            patient_id: "x".into(),
            hospital: "H".into(),
            split: Split::Test,
            score: None,
            error: Some("io-error: missing".into()),
        });
        let r = &summarize(&ps)[0];
        assert_eq!((r.scored, r.failed), (1, 1));
    }
}

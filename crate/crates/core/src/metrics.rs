//! Voxel-wise overlap, patient-wise detection and classification scores,
//! fold pooling and multi-rater consensus.
//!
//! Undefined values (empty denominators, Dice of two empty masks) are `None`
//! and never coerced to zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::post::GTR_CUTOFF_ML;

pub const DICE_FLOOR: f64 = 0.01;

fn overlap_counts(gt: &BinaryMask, pred: &BinaryMask) -> Result<(usize, usize, usize)> {
    gt.geometry().ensure_same_space(pred.geometry(), "overlap score")?;
    let inter = gt.intersection_count(pred)?;
    Ok((inter, gt.count(), pred.count()))
}

/// `2|A∩B| / (|A| + |B|)`; `None` when both masks are empty.
pub fn dice(gt: &BinaryMask, pred: &BinaryMask) -> Result<Option<f64>> {
    let (inter, a, b) = overlap_counts(gt, pred)?;
    Ok((a + b > 0).then(|| 2.0 * inter as f64 / (a + b) as f64))
}

/// `|A∩B| / |A∪B|`; `None` when both masks are empty.
pub fn jaccard(gt: &BinaryMask, pred: &BinaryMask) -> Result<Option<f64>> {
    let (inter, a, b) = overlap_counts(gt, pred)?;
    let union = a + b - inter;
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

pub fn jaccard_from_dice(d: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::InvalidArgument(format!("dice {d} outside [0, 1]")));
    }
    Ok(d / (2.0 - d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detection {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "TN")]
    Tn,
    #[serde(rename = "FP")]
    Fp,
    #[serde(rename = "FN")]
    Fn,
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detection::Tp => "TP",
            Detection::Tn => "TN",
            Detection::Fp => "FP",
            Detection::Fn => "FN",
        })
    }
}

impl FromStr for Detection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "TP" => Ok(Detection::Tp),
            "TN" => Ok(Detection::Tn),
            "FP" => Ok(Detection::Fp),
            "FN" => Ok(Detection::Fn),
            other => Err(Error::InvalidArgument(format!("unknown detection status '{other}'"))),
        }
    }
}

/// How overlap enters the TP decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DetectionRule {
    /// TP also needs `dice >= dice_floor`.
    #[default]
    #[serde(rename = "detection-loose")]
    DiceFloor,
    /// TP on volumes alone.
    #[serde(rename = "detection-volume")]
    VolumeOnly,
}

impl fmt::Display for DetectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectionRule::DiceFloor => "detection-loose",
            DetectionRule::VolumeOnly => "detection-volume",
        })
    }
}

impl FromStr for DetectionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "detection-loose" | "loose" => Ok(DetectionRule::DiceFloor),
            "detection-volume" | "volume" => Ok(DetectionRule::VolumeOnly),
            other => Err(Error::InvalidArgument(format!("unknown detection rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub cutoff_ml: f64,
    pub dice_floor: f64,
    pub rule: DetectionRule,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self { cutoff_ml: GTR_CUTOFF_ML, dice_floor: DICE_FLOOR, rule: DetectionRule::default() }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_ml.is_finite() && self.cutoff_ml >= 0.0) {
            return Err(Error::InvalidArgument(format!("cutoff_ml {} must be finite and >= 0", self.cutoff_ml)));
        }
        if !(0.0..=1.0).contains(&self.dice_floor) {
            return Err(Error::InvalidArgument(format!("dice_floor {} outside [0, 1]", self.dice_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStatus {
    pub status: Detection,
    pub gt_volume_ml: f64,
    pub pred_volume_ml: f64,
    pub dice: Option<f64>,
}

/// Exactly one of TP/TN/FP/FN for every input. An undefined Dice counts as
/// below any floor.
pub fn patient_detection_status(
    gt_volume_ml: f64,
    pred_volume_ml: f64,
    dice: Option<f64>,
    params: &DetectionParams,
) -> DetectionStatus {
    let gt_rt = gt_volume_ml >= params.cutoff_ml;
    let pred_rt = pred_volume_ml >= params.cutoff_ml;
    let overlaps = match params.rule {
        DetectionRule::VolumeOnly => true,
        DetectionRule::DiceFloor => dice.is_some_and(|d| d >= params.dice_floor),
    };
    let status = match (gt_rt, pred_rt) {
        (true, true) if overlaps => Detection::Tp,
        (true, _) => Detection::Fn,
        (false, true) => Detection::Fp,
        (false, false) => Detection::Tn,
    };
    DetectionStatus { status, gt_volume_ml, pred_volume_ml, dice }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn add(&mut self, d: Detection) {
        match d {
            Detection::Tp => self.tp += 1,
            Detection::Tn => self.tn += 1,
            Detection::Fp => self.fp += 1,
            Detection::Fn => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl FromIterator<Detection> for ConfusionCounts {
    fn from_iter<I: IntoIterator<Item = Detection>>(iter: I) -> Self {
        let mut c = Self::default();
        for d in iter {
            c.add(d);
        }
        c
    }
}

/// Rates as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub bacc: Option<f64>,
}

impl DetectionMetrics {
    pub fn sensitivity(&self) -> Option<f64> {
        self.recall
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn balanced_accuracy(sensitivity: f64, specificity: f64) -> f64 {
    (sensitivity + specificity) / 2.0
}

pub fn detection_metrics(c: &ConfusionCounts) -> DetectionMetrics {
    let recall = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let specificity = ratio(c.tn, c.tn + c.fp);
    DetectionMetrics {
        recall,
        precision,
        specificity,
        f1: precision.zip(recall).map(|(p, r)| f1_score(p, r)),
        bacc: recall.zip(specificity).map(|(s, t)| balanced_accuracy(s, t)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledStat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

/// Mean and population standard deviation (Welford's update).
pub fn pooled_stats(values: &[f64]) -> Result<PooledStat> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot pool an empty list".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {v} in pooled list")));
    }
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (k, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = values.len();
    Ok(PooledStat { mean, std: (m2 / n as f64).max(0.0).sqrt(), n })
}

/// Pool the defined entries; undefined ones are counted, not averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub stat: Option<PooledStat>,
    pub excluded: usize,
}

impl PoolSummary {
    pub fn n(&self) -> usize {
        self.stat.map_or(0, |s| s.n)
    }
}

pub fn pool_defined(values: impl IntoIterator<Item = Option<f64>>) -> PoolSummary {
    let mut defined = Vec::new();
    let mut excluded = 0;
    for v in values {
        match v {
            Some(x) if x.is_finite() => defined.push(x),
            _ => excluded += 1,
        }
    }
    PoolSummary { stat: pooled_stats(&defined).ok(), excluded }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupDice {
    /// Patients whose ground truth holds residual tumor.
    pub positive: PoolSummary,
    /// Patients detected as true positives.
    pub true_positive: PoolSummary,
}

/// The positive group is read off the status (TP or FN), which already
/// encodes `gt_volume_ml >= cutoff`.
pub fn group_dice(patients: &[DetectionStatus]) -> GroupDice {
    let positive = pool_defined(
        patients.iter().filter(|p| matches!(p.status, Detection::Tp | Detection::Fn)).map(|p| p.dice),
    );
    let true_positive = pool_defined(patients.iter().filter(|p| p.status == Detection::Tp).map(|p| p.dice));
    GroupDice { positive, true_positive }
}

/// Strict majority: a voxel is kept when more than half of the raters mark it.
pub fn consensus_vote(annotations: &[BinaryMask]) -> Result<BinaryMask> {
    let first = annotations
        .first()
        .ok_or_else(|| Error::InvalidArgument("consensus needs at least one annotation".into()))?;
    for (k, a) in annotations.iter().enumerate().skip(1) {
        first.geometry().ensure_same_space(a.geometry(), &format!("consensus annotation {k}"))?;
    }
    let n = annotations.len();
    let mut votes = vec![0usize; first.data().len()];
    for a in annotations {
        for (v, &m) in votes.iter_mut().zip(a.data()) {
            *v += m as usize;
        }
    }
    BinaryMask::new(first.geometry().clone(), votes.into_iter().map(|v| 2 * v > n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterScore {
    pub rater: String,
    pub jaccard: Option<f64>,
}

pub fn interrater_scores(annotations: &[(String, BinaryMask)], reference: &BinaryMask) -> Result<Vec<RaterScore>> {
    annotations
        .iter()
        .map(|(name, mask)| Ok(RaterScore { rater: name.clone(), jaccard: jaccard(reference, mask)? }))
        .collect()
}

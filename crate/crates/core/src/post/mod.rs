//! From probability map to resection verdict: binarization, connected
//! component noise filtering, residual volume and GTR/RT classification,
//! plus model ensembling and extent of resection.

mod components;

pub use components::{connected_components, filter_small_components, Component, ComponentLabeling, Connectivity};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Intensity, VoxelGrid};

/// Residual volume below which a resection counts as gross total, in ml.
pub const GTR_CUTOFF_ML: f64 = 0.175;
/// Components smaller than this many voxels are treated as noise.
pub const MIN_COMPONENT_VOXELS: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resection {
    /// Gross total resection.
    #[serde(rename = "GTR")]
    Gtr,
    /// Residual tumor.
    #[serde(rename = "RT")]
    Rt,
}

impl fmt::Display for Resection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resection::Gtr => "GTR",
            Resection::Rt => "RT",
        })
    }
}

impl FromStr for Resection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "GTR" => Ok(Self::Gtr),
            "RT" => Ok(Self::Rt),
            other => Err(Error::InvalidArgument(format!("unknown resection class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResectionVerdict {
    pub residual_volume_ml: f64,
    pub classification: Resection,
    pub cutoff_ml: f64,
}

/// Foreground of `prob >= threshold`.
pub fn binarize(prob: &VoxelGrid, threshold: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    if !prob.is_probability() {
        return Err(Error::InvalidArgument("binarize expects a probability grid".into()));
    }
    let data = prob.data().iter().map(|&p| p >= threshold).collect();
    BinaryMask::new(prob.geometry().clone(), data)
}

pub fn residual_volume_ml(mask: &BinaryMask) -> f64 {
    mask.volume_ml()
}

/// GTR iff `volume_ml < cutoff_ml`.
pub fn classify_resection(volume_ml: f64, cutoff_ml: f64) -> Result<ResectionVerdict> {
    if !(volume_ml >= 0.0 && volume_ml.is_finite()) {
        return Err(Error::InvalidArgument(format!("residual volume {volume_ml} must be >= 0")));
    }
    if !(cutoff_ml > 0.0 && cutoff_ml.is_finite()) {
        return Err(Error::InvalidArgument(format!("cutoff {cutoff_ml} must be > 0")));
    }
    let classification = if volume_ml < cutoff_ml { Resection::Gtr } else { Resection::Rt };
    Ok(ResectionVerdict { residual_volume_ml: volume_ml, classification, cutoff_ml })
}

/// Voxel-wise mean of several probability maps.
///
/// Each voxel's values are summed in sorted order so the result does not
/// depend on the order of `probs`, then clamped to the input range.
pub fn ensemble_average(probs: &[VoxelGrid]) -> Result<VoxelGrid> {
    let first = probs
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one map".into()))?;
    for (k, p) in probs.iter().enumerate() {
        if !p.is_probability() {
            return Err(Error::InvalidArgument(format!("map {k} is not a probability grid")));
        }
        first.geometry().ensure_same_space(p.geometry(), "ensemble_average")?;
    }
    let n = probs.len();
    let mut scratch = Vec::with_capacity(n);
    let data = (0..first.data().len())
        .map(|i| {
            scratch.clear();
            scratch.extend(probs.iter().map(|p| p.data()[i]));
            scratch.sort_by(f64::total_cmp);
            let mean = scratch.iter().sum::<f64>() / n as f64;
            mean.clamp(scratch[0], scratch[n - 1])
        })
        .collect();
    VoxelGrid::new(first.geometry().clone(), data, Intensity::Probability)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtentOfResection {
    pub eor: f64,
    /// The raw ratio fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

/// `(preop - residual) / preop`, clamped to `[0, 1]`.
pub fn compute_eor(preop_volume_ml: f64, residual_volume_ml: f64) -> Result<ExtentOfResection> {
    if !(preop_volume_ml > 0.0 && preop_volume_ml.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pre-operative volume {preop_volume_ml} must be > 0"
        )));
    }
    if !(residual_volume_ml >= 0.0 && residual_volume_ml.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "residual volume {residual_volume_ml} must be >= 0"
        )));
    }
    let raw = (preop_volume_ml - residual_volume_ml) / preop_volume_ml;
    let eor = raw.clamp(0.0, 1.0);
    Ok(ExtentOfResection { eor, clamped: eor != raw })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PostprocessParams {
    pub threshold: f64,
    #[serde(serialize_with = "serialize_connectivity")]
    pub connectivity: Connectivity,
    pub min_voxels: usize,
    pub cutoff_ml: f64,
}

fn serialize_connectivity<S: serde::Serializer>(c: &Connectivity, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u32(c.neighbours())
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            connectivity: Connectivity::TwentySix,
            min_voxels: MIN_COMPONENT_VOXELS,
            cutoff_ml: GTR_CUTOFF_ML,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.min_voxels < 1 {
            return Err(Error::InvalidArgument("min_voxels must be at least 1".into()));
        }
        if !(self.cutoff_ml > 0.0 && self.cutoff_ml.is_finite()) {
            return Err(Error::InvalidArgument(format!("cutoff {} must be > 0", self.cutoff_ml)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PostprocessOutcome {
    pub mask: BinaryMask,
    pub verdict: ResectionVerdict,
    pub components_found: usize,
    pub components_kept: usize,
}

/// Binarize, label, drop small components, measure and classify.
pub fn run_postprocess(prob: &VoxelGrid, params: &PostprocessParams) -> Result<PostprocessOutcome> {
    params.validate()?;
    let binary = binarize(prob, params.threshold)?;
    let labeling = connected_components(&binary, params.connectivity);
    let mask = filter_small_components(&labeling, params.min_voxels)?;
    let volume = residual_volume_ml(&mask);
    let verdict = classify_resection(volume, params.cutoff_ml)?;
    let components_kept = labeling
        .components()
        .iter()
        .filter(|c| c.voxel_count >= params.min_voxels)
        .count();
    Ok(PostprocessOutcome { mask, verdict, components_found: labeling.len(), components_kept })
}

/// Evenly spaced thresholds `0, 1/(steps-1), ..., 1`, each run through
/// [`run_postprocess`] with the remaining parameters unchanged.
pub fn threshold_sweep(
    prob: &VoxelGrid,
    params: &PostprocessParams,
    steps: usize,
) -> Result<Vec<(f64, PostprocessOutcome)>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("a sweep needs at least 2 steps, got {steps}")));
    }
    (0..steps)
        .map(|i| {
            let threshold = i as f64 / (steps - 1) as f64;
            let p = PostprocessParams { threshold, ..*params };
            Ok((threshold, run_postprocess(prob, &p)?))
        })
        .collect()
}

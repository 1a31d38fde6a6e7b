use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::parse_key_values;
use crate::error::{Error, Result};
use crate::grid::InputConfiguration;
use crate::metrics::{DetectionParams, DetectionRule};
use crate::post::{Connectivity, PostprocessParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictionSource {
    /// Probability maps listed in the manifest's `pred_k` columns.
    #[default]
    External,
    /// Maps produced on the fly by the Otsu baseline.
    Baseline,
}

impl fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionSource::External => "external",
            PredictionSource::Baseline => "baseline",
        })
    }
}

impl FromStr for PredictionSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "external" => Ok(Self::External),
            "baseline" => Ok(Self::Baseline),
            other => Err(Error::Config(format!("unknown prediction_source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub configuration: InputConfiguration,
    pub post: PostprocessParams,
    pub detection: DetectionParams,
    pub source: PredictionSource,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            configuration: InputConfiguration::A,
            post: PostprocessParams::default(),
            detection: DetectionParams::default(),
            source: PredictionSource::default(),
            output_dir: None,
            formats: vec![ReportFormat::Csv, ReportFormat::Markdown],
        }
    }
}

impl ExperimentConfig {
    /// Flat `key = value` text; unspecified keys keep their defaults.
    ///
    /// Keys: `configuration`, `threshold`, `connectivity`, `min_voxels`,
    /// `cutoff_ml`, `dice_floor`, `detection_rule`, `prediction_source`,
    /// `output_dir`, `formats`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text, Error::Config)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if let (Some(dir), Some(base)) = (cfg.output_dir.as_mut(), path.parent()) {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: Error| Error::Config(format!("{key}: {e}"));
        let number = |v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("{key}: '{v}' is not a number")));
        match key {
            "configuration" => self.configuration = value.parse().map_err(bad)?,
            "threshold" => self.post.threshold = number(value)?,
            "connectivity" => self.post.connectivity = Connectivity::from_str(value).map_err(bad)?,
            "min_voxels" => {
                self.post.min_voxels =
                    value.parse().map_err(|_| Error::Config(format!("{key}: '{value}' is not a count")))?
            }
            "cutoff_ml" => {
                let c = number(value)?;
                self.post.cutoff_ml = c;
                self.detection.cutoff_ml = c;
            }
            "dice_floor" => self.detection.dice_floor = number(value)?,
            "detection_rule" => self.detection.rule = DetectionRule::from_str(value).map_err(bad)?,
            "prediction_source" => self.source = value.parse()?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "formats" => {
                let mut formats =
                    value.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
                formats.sort();
                formats.dedup();
                self.formats = formats;
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.post.validate().map_err(wrap)?;
        self.detection.validate().map_err(wrap)?;
        Ok(())
    }
}

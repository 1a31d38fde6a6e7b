//! Voxel grids, masks, and the geometric preprocessing applied around inference.

mod geometry;
mod resample;
mod volume;

pub use geometry::{voxel_volume_ml, GridGeometry};
pub use resample::{
    apply_mask, resample, resample_mask_to_reference, resample_to_reference, resize_to,
    zero_mean_normalize, Interpolation, NormRegion, Normalized,
};
pub use volume::{BinaryMask, Intensity, VoxelGrid};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Scan roles that can feed a segmentation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sequence {
    PostT1wCe,
    PostT1w,
    PostFlair,
    PreT1wCe,
    PreLabel,
}

impl Sequence {
    pub fn name(self) -> &'static str {
        match self {
            Sequence::PostT1wCe => "EPMR-T1wCE",
            Sequence::PostT1w => "EPMR-T1w",
            Sequence::PostFlair => "EPMR-FLAIR",
            Sequence::PreT1wCe => "PRE-T1wCE",
            Sequence::PreLabel => "PRE-label",
        }
    }
}

/// Input sequence combinations A through E.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputConfiguration {
    A,
    B,
    C,
    D,
    E,
}

impl InputConfiguration {
    pub const ALL: [InputConfiguration; 5] = [Self::A, Self::B, Self::C, Self::D, Self::E];

    pub fn sequences(self) -> Vec<Sequence> {
        use Sequence::*;
        let mut seqs = vec![PostT1wCe];
        if self != Self::A {
            seqs.push(PostT1w);
        }
        if matches!(self, Self::C | Self::E) {
            seqs.push(PostFlair);
        }
        if matches!(self, Self::D | Self::E) {
            seqs.extend([PreT1wCe, PreLabel]);
        }
        seqs
    }

    /// Number of input channels.
    pub fn channel_count(self) -> usize {
        self.sequences().len()
    }

    pub fn label(self) -> char {
        match self {
            Self::A => 'A',
            Self::B => 'B',
            Self::C => 'C',
            Self::D => 'D',
            Self::E => 'E',
        }
    }
}

impl fmt::Display for InputConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl FromStr for InputConfiguration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            "E" => Ok(Self::E),
            other => Err(Error::InvalidArgument(format!("unknown input configuration {other:?}"))),
        }
    }
}

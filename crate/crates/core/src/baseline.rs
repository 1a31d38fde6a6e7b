//! Reference segmenter without a neural network: Otsu thresholding of the
//! contrast-enhanced scan inside the brain, minus voxels that are also bright
//! on the native T1w scan (blood).

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Intensity, VoxelGrid};

pub const BINS: usize = 256;

/// 256-bin histogram over the linear range `[min, max]` of the sampled values.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityHistogram {
    counts: [u64; BINS],
    min: f64,
    max: f64,
}

impl IntensityHistogram {
    pub fn from_values(values: impl IntoIterator<Item = f64> + Clone) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.clone() {
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            (min, max) = (0.0, 0.0);
        }
        let mut hist = Self { counts: [0; BINS], min, max };
        for v in values {
            hist.counts[hist.bin_of(v)] += 1;
        }
        hist
    }

    /// Histogram with explicit counts over the unit range `[0, 255]`.
    pub fn from_counts(counts: [u64; BINS]) -> Self {
        Self { counts, min: 0.0, max: (BINS - 1) as f64 }
    }

    pub fn counts(&self) -> &[u64; BINS] {
        &self.counts
    }

    pub fn range(&self) -> (f64, f64) {
        (self.min, self.max)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `floor(255 * (v - min) / (max - min))`, clamped to `[0, 255]`.
    pub fn bin_of(&self, v: f64) -> usize {
        let span = self.max - self.min;
        if !(span > 0.0) {
            return 0;
        }
        let b = ((BINS - 1) as f64 * (v - self.min) / span).floor();
        b.clamp(0.0, (BINS - 1) as f64) as usize
    }
}

/// Between-class variance times `N^2`, as the exact fraction
/// `gap^2 / (n0 * n1)`.
#[derive(Debug, Clone, Copy)]
struct Separation {
    gap: u128,
    denominator: u128,
}

impl Separation {
    fn exceeds(&self, other: &Separation) -> bool {
        let fast = self
            .gap
            .checked_mul(self.gap)
            .and_then(|sq| sq.checked_mul(other.denominator))
            .zip(other.gap.checked_mul(other.gap).and_then(|sq| sq.checked_mul(self.denominator)));
        match fast {
            Some((a, b)) => a > b,
            None => {
                let big = |x: u128| BigUint::from(x);
                big(self.gap).pow(2) * big(other.denominator) > big(other.gap).pow(2) * big(self.denominator)
            }
        }
    }
}

/// Otsu threshold: the bin index `t` (class 0 = bins `< t`, class 1 = bins
/// `>= t`) maximizing the between-class variance. Ties go to the smallest `t`.
pub fn otsu_threshold(hist: &IntensityHistogram) -> Result<usize> {
    let nonempty = hist.counts.iter().filter(|&&c| c > 0).count();
    if nonempty < 2 {
        return Err(Error::DegenerateHistogram(format!(
            "{nonempty} nonempty bin(s); need at least two"
        )));
    }
    let total: u128 = hist.counts.iter().map(|&c| c as u128).sum();
    let weighted: u128 = hist.counts.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();

    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best: Option<(usize, Separation)> = None;
    for t in 1..BINS {
        n0 += hist.counts[t - 1] as u128;
        s0 += (t as u128 - 1) * hist.counts[t - 1] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // w0 * w1 * (mu0 - mu1)^2 * N^2 = (s0 * N - S * n0)^2 / (n0 * n1)
        let d = (s0 * total).abs_diff(weighted * n0);
        let sep = Separation { gap: d, denominator: n0 * n1 };
        if best.as_ref().is_none_or(|(_, b)| sep.exceeds(b)) {
            best = Some((t, sep));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::DegenerateHistogram("no threshold splits the histogram".into()))
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    /// Hard 0/1 probability map.
    pub prob: VoxelGrid,
    pub t1ce_bin: Option<usize>,
    pub t1w_bin: Option<usize>,
    pub warnings: Vec<String>,
}

/// Segment enhancing residual tumor from co-registered T1w-CE and T1w scans.
///
/// Candidates are brain voxels at or above the Otsu bin of T1w-CE (within the
/// brain); candidates at or above the Otsu bin of T1w are discarded as blood.
/// A flat T1w histogram disables the blood exclusion; a flat T1w-CE histogram
/// (including an empty brain) yields an empty map.
pub fn baseline_segment(t1ce: &VoxelGrid, t1w: &VoxelGrid, brain: &BinaryMask) -> Result<BaselineOutcome> {
    t1ce.geometry().ensure_same_space(t1w.geometry(), "baseline T1w-CE vs T1w")?;
    t1ce.geometry().ensure_same_space(brain.geometry(), "baseline T1w-CE vs brain mask")?;
    let inside = brain.data();
    let mut warnings = Vec::new();
    let empty = || BinaryMask::empty(t1ce.geometry().clone());

    let brain_values = |grid: &VoxelGrid| -> Vec<f64> {
        grid.data().iter().zip(inside).filter_map(|(&v, &b)| b.then_some(v)).collect()
    };

    let ce_values = brain_values(t1ce);
    let ce_hist = IntensityHistogram::from_values(ce_values.iter().copied());
    let t1ce_bin = match otsu_threshold(&ce_hist) {
        Ok(t) => Some(t),
        Err(e) => {
            warnings.push(format!("T1w-CE: {e}; output is empty"));
            None
        }
    };
    let Some(ce_bin) = t1ce_bin else {
        for w in &warnings {
            log::warn!("{w}");
        }
        return Ok(BaselineOutcome {
            prob: empty().to_grid(Intensity::Probability),
            t1ce_bin,
            t1w_bin: None,
            warnings,
        });
    };

    let w_values = brain_values(t1w);
    let w_hist = IntensityHistogram::from_values(w_values.iter().copied());
    let t1w_bin = match otsu_threshold(&w_hist) {
        Ok(t) => Some(t),
        Err(e) => {
            warnings.push(format!("T1w: {e}; blood exclusion skipped"));
            None
        }
    };

    let mut mask = empty();
    for (i, out) in mask.data_mut().iter_mut().enumerate() {
        if !inside[i] {
            continue;
        }
        let candidate = ce_hist.bin_of(t1ce.data()[i]) >= ce_bin;
        let blood = t1w_bin.is_some_and(|wb| w_hist.bin_of(t1w.data()[i]) >= wb);
        *out = candidate && !blood;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BaselineOutcome { prob: mask.to_grid(Intensity::Probability), t1ce_bin, t1w_bin, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use rand::{Rng, SeedableRng};

    /// Exhaustive definitional search: weights, class means, between-class
    /// variance compared as exact fractions.
    fn otsu_oracle(counts: &[u64; BINS]) -> Option<usize> {
        let mut best: Option<(usize, BigUint, BigUint)> = None;
        for t in 0..BINS {
            let n0: u128 = counts[..t].iter().map(|&c| c as u128).sum();
            let n1: u128 = counts[t..].iter().map(|&c| c as u128).sum();
            if n0 == 0 || n1 == 0 {
                continue;
            }
            let s0: u128 = counts[..t].iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
            let s1: u128 = counts[t..].iter().enumerate().map(|(i, &c)| (i + t) as u128 * c as u128).sum();
            // w0 w1 (mu0 - mu1)^2 = (s1 n0 - s0 n1)^2 / (N^2 n0 n1)
            let diff = BigUint::from((s1 * n0).abs_diff(s0 * n1));
            let num = &diff * &diff;
            let den = BigUint::from(n0) * BigUint::from(n1);
            let better = match &best {
                None => true,
                Some((_, bn, bd)) => &num * bd > bn * &den,
            };
            if better {
                best = Some((t, num, den));
            }
        }
        best.map(|(t, _, _)| t)
    }

    #[test]
    fn bimodal_histogram_smallest_maximizer() {
        let mut counts = [0u64; BINS];
        counts[10] = 50;
        counts[200] = 30;
        let t = otsu_threshold(&IntensityHistogram::from_counts(counts)).unwrap();
        assert_eq!(t, 11);
        assert_eq!(otsu_oracle(&counts), Some(11));
    }

    #[test]
    fn single_bin_is_degenerate() {
        let mut counts = [0u64; BINS];
        counts[42] = 1000;
        let err = otsu_threshold(&IntensityHistogram::from_counts(counts)).unwrap_err();
        assert_eq!(err.kind(), "degenerate-histogram");
        let err = otsu_threshold(&IntensityHistogram::from_values(std::iter::empty())).unwrap_err();
        assert_eq!(err.kind(), "degenerate-histogram");
    }

    #[test]
    fn agrees_with_exhaustive_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let mut counts = [0u64; BINS];
            let density: f64 = rng.gen_range(0.02..1.0);
            for c in counts.iter_mut() {
                if rng.gen_bool(density) {
                    *c = rng.gen_range(0..1000);
                }
            }
            let hist = IntensityHistogram::from_counts(counts);
            assert_eq!(otsu_threshold(&hist).ok(), otsu_oracle(&counts));
        }
    }

    #[test]
    fn exact_with_huge_counts() {
        let mut counts = [0u64; BINS];
        counts[3] = 4_000_000_000;
        counts[97] = 3_999_999_999;
        counts[98] = 1;
        counts[250] = 7_000_000_000;
        let t = otsu_threshold(&IntensityHistogram::from_counts(counts)).unwrap();
        assert_eq!(Some(t), otsu_oracle(&counts));
    }

    #[test]
    fn histogram_binning() {
        let h = IntensityHistogram::from_values([10.0, 20.0, 15.0, 20.0]);
        assert_eq!(h.total(), 4);
        assert_eq!(h.bin_of(10.0), 0);
        assert_eq!(h.bin_of(20.0), 255);
        assert_eq!(h.bin_of(15.0), 127);
        assert_eq!(h.bin_of(-5.0), 0);
        assert_eq!(h.bin_of(99.0), 255);
    }

    fn phantom(with_blood: bool) -> (VoxelGrid, VoxelGrid, BinaryMask, BinaryMask) {
        let g = GridGeometry::with_spacing([20, 20, 10], [1.0; 3]).unwrap();
        let brain = BinaryMask::from_fn(g.clone(), |[x, y, _]| (2..18).contains(&x) && (2..18).contains(&y));
        let tumor = BinaryMask::from_fn(g.clone(), |[x, y, z]| (4..8).contains(&x) && (4..8).contains(&y) && (3..6).contains(&z));
        let blood = BinaryMask::from_fn(g.clone(), |[x, y, z]| {
            with_blood && (12..15).contains(&x) && (12..15).contains(&y) && (3..6).contains(&z)
        });
        let t1ce = VoxelGrid::from_fn(g.clone(), Intensity::Raw, |[x, y, z]| {
            let i = g.index(x, y, z);
            if !brain.data()[i] {
                0.0
            } else if tumor.data()[i] || blood.data()[i] {
                300.0
            } else {
                100.0
            }
        })
        .unwrap();
        let t1w = VoxelGrid::from_fn(g.clone(), Intensity::Raw, |[x, y, z]| {
            let i = g.index(x, y, z);
            if blood.data()[i] {
                300.0
            } else if brain.data()[i] {
                100.0
            } else {
                0.0
            }
        })
        .unwrap();
        (t1ce, t1w, brain, tumor)
    }

    #[test]
    fn segments_phantom_blob() {
        let (t1ce, t1w, brain, tumor) = phantom(false);
        let out = baseline_segment(&t1ce, &t1w, &brain).unwrap();
        assert_eq!(BinaryMask::from_grid_above(&out.prob, 0.5), tumor);
        assert_eq!(out.t1w_bin, None);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn excludes_blood_bright_on_both() {
        let (t1ce, t1w, brain, tumor) = phantom(true);
        let out = baseline_segment(&t1ce, &t1w, &brain).unwrap();
        assert_eq!(BinaryMask::from_grid_above(&out.prob, 0.5), tumor);
        assert!(out.prob.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(out.prob.is_probability());
    }

    #[test]
    fn empty_brain_gives_empty_output() {
        let (t1ce, t1w, brain, _) = phantom(true);
        let none = BinaryMask::empty(brain.geometry().clone());
        let out = baseline_segment(&t1ce, &t1w, &none).unwrap();
        assert!(out.prob.data().iter().all(|&v| v == 0.0));
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn output_is_zero_outside_brain() {
        let (t1ce, t1w, _, _) = phantom(true);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let brain = BinaryMask::from_fn(t1ce.geometry().clone(), |_| rng.gen_bool(0.6));
            let out = baseline_segment(&t1ce, &t1w, &brain).unwrap();
            for (v, b) in out.prob.data().iter().zip(brain.data()) {
                assert!(*b || *v == 0.0);
            }
        }
    }

    #[test]
    fn mismatched_geometry_rejected() {
        let (t1ce, _, brain, _) = phantom(false);
        let other = VoxelGrid::filled(GridGeometry::with_spacing([20, 20, 11], [1.0; 3]).unwrap(), 1.0, Intensity::Raw).unwrap();
        assert_eq!(baseline_segment(&t1ce, &other, &brain).unwrap_err().kind(), "incompatible-grids");
    }
}

//! Grid-to-grid resampling and the intensity preprocessing steps applied
//! before inference.

use nalgebra::Vector4;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridGeometry, Intensity, VoxelGrid};

/// Sample positions closer than this to an integer index snap onto it.
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// For intensity and probability grids.
    #[default]
    Trilinear,
    /// For masks and label maps; only emits values present in the input.
    Nearest,
}

/// How sample positions outside the input lattice are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Boundary {
    /// Clamp to the edge voxel.
    Clamp,
    /// Clamp within half a voxel of the lattice (the physical extent), 0 beyond.
    Zero,
}

fn snap(c: f64) -> f64 {
    let r = c.round();
    if (c - r).abs() < SNAP_TOL {
        r
    } else {
        c
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Per-axis lower index and fractional weight; `None` weight means exactly on `i0`.
fn axis_support(c: f64, n: usize) -> (usize, Option<f64>) {
    let c = c.clamp(0.0, (n - 1) as f64);
    let i0 = c.floor();
    let t = c - i0;
    let i0 = i0 as usize;
    if t == 0.0 || i0 + 1 >= n {
        (i0, None)
    } else {
        (i0, Some(t))
    }
}

fn sample(
    data: &[f64],
    geometry: &GridGeometry,
    c: [f64; 3],
    mode: Interpolation,
    boundary: Boundary,
) -> f64 {
    let shape = geometry.shape();
    if boundary == Boundary::Zero
        && (0..3).any(|a| c[a] < -0.5 - SNAP_TOL || c[a] > shape[a] as f64 - 0.5 + SNAP_TOL)
    {
        return 0.0;
    }
    match mode {
        Interpolation::Nearest => {
            let idx: [usize; 3] = std::array::from_fn(|a| {
                let r = (c[a] + 0.5).floor();
                r.clamp(0.0, (shape[a] - 1) as f64) as usize
            });
            data[geometry.index(idx[0], idx[1], idx[2])]
        }
        Interpolation::Trilinear => {
            let (x0, tx) = axis_support(c[0], shape[0]);
            let (y0, ty) = axis_support(c[1], shape[1]);
            let (z0, tz) = axis_support(c[2], shape[2]);
            let at = |x: usize, y: usize, z: usize| data[geometry.index(x, y, z)];
            let along_x = |y: usize, z: usize| match tx {
                None => at(x0, y, z),
                Some(t) => lerp(at(x0, y, z), at(x0 + 1, y, z), t),
            };
            let along_y = |z: usize| match ty {
                None => along_x(y0, z),
                Some(t) => lerp(along_x(y0, z), along_x(y0 + 1, z), t),
            };
            match tz {
                None => along_y(z0),
                Some(t) => lerp(along_y(z0), along_y(z0 + 1), t),
            }
        }
    }
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "target spacing {spacing:?} must be finite and positive"
        )));
    }
    Ok(())
}

/// Resample `grid` onto a lattice with `target_spacing`, keeping the physical
/// position of the first voxel centre and the axis directions.
///
/// Output shape per axis is `round(n * spacing / target)`, at least 1.
pub fn resample(grid: &VoxelGrid, target_spacing: [f64; 3], mode: Interpolation) -> Result<VoxelGrid> {
    check_spacing(target_spacing)?;
    let src = grid.geometry();
    let (shape, spacing) = (src.shape(), src.spacing());
    let out_shape: [usize; 3] = std::array::from_fn(|a| {
        ((shape[a] as f64 * spacing[a] / target_spacing[a]).round() as usize).max(1)
    });
    let out_geom = src.respaced(out_shape, target_spacing, src.origin())?;
    let ratio: [f64; 3] = std::array::from_fn(|a| target_spacing[a] / spacing[a]);
    let data = (0..out_geom.len())
        .map(|i| {
            let j = out_geom.coords(i);
            let c = std::array::from_fn(|a| snap(j[a] as f64 * ratio[a]));
            sample(grid.data(), src, c, mode, Boundary::Clamp)
        })
        .collect();
    VoxelGrid::new(out_geom, data, grid.kind())
}

/// Resize `grid` to `target_shape`, stretching the spacing so the physical
/// extent (first voxel corner to last voxel corner) is preserved.
pub fn resize_to(grid: &VoxelGrid, target_shape: [usize; 3], mode: Interpolation) -> Result<VoxelGrid> {
    if target_shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "target shape {target_shape:?} must be positive"
        )));
    }
    let src = grid.geometry();
    let (shape, spacing) = (src.shape(), src.spacing());
    if target_shape == shape {
        return Ok(grid.clone());
    }
    let scale: [f64; 3] = std::array::from_fn(|a| shape[a] as f64 / target_shape[a] as f64);
    let out_spacing: [f64; 3] = std::array::from_fn(|a| {
        shape[a] as f64 * spacing[a] / target_shape[a] as f64
    });
    let shift: [f64; 3] = std::array::from_fn(|a| 0.5 * scale[a] - 0.5);
    let origin = src.index_to_physical(shift);
    let out_geom = src.respaced(target_shape, out_spacing, origin)?;
    let data = (0..out_geom.len())
        .map(|i| {
            let j = out_geom.coords(i);
            let c = std::array::from_fn(|a| snap((j[a] as f64 + 0.5) * scale[a] - 0.5));
            sample(grid.data(), src, c, mode, Boundary::Clamp)
        })
        .collect();
    VoxelGrid::new(out_geom, data, grid.kind())
}

/// Sample `moving` on the lattice of `reference` through the two affines.
///
/// Reference voxels that fall more than half a voxel outside the moving grid
/// are set to 0.
pub fn resample_to_reference(
    moving: &VoxelGrid,
    reference: &GridGeometry,
    mode: Interpolation,
) -> Result<VoxelGrid> {
    if moving.geometry() == reference {
        return Ok(moving.clone());
    }
    let to_moving = moving.geometry().inverse_matrix()? * reference.matrix();
    let data = (0..reference.len())
        .map(|i| {
            let [x, y, z] = reference.coords(i);
            let p = to_moving * Vector4::new(x as f64, y as f64, z as f64, 1.0);
            let c = [snap(p[0]), snap(p[1]), snap(p[2])];
            sample(moving.data(), moving.geometry(), c, mode, Boundary::Zero)
        })
        .collect();
    VoxelGrid::new(reference.clone(), data, moving.kind())
}

/// Nearest-neighbour resampling of a mask onto `reference`.
pub fn resample_mask_to_reference(mask: &BinaryMask, reference: &GridGeometry) -> Result<BinaryMask> {
    let grid = resample_to_reference(&mask.to_grid(Intensity::Raw), reference, Interpolation::Nearest)?;
    Ok(BinaryMask::from_grid_above(&grid, 0.5))
}

/// Voxels over which normalization statistics are computed.
#[derive(Debug, Clone, Copy)]
pub enum NormRegion<'a> {
    Mask(&'a BinaryMask),
    WholeGrid,
    /// Voxels with a nonzero value.
    Nonzero,
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub grid: VoxelGrid,
    pub mean: f64,
    pub std: f64,
    /// The region had zero variance; its voxels were set to 0.
    pub degenerate: bool,
}

/// Zero-mean, unit (population) standard deviation over `region`; voxels
/// outside the region are set to 0.
pub fn zero_mean_normalize(grid: &VoxelGrid, region: NormRegion<'_>) -> Result<Normalized> {
    let inside: Vec<bool> = match region {
        NormRegion::Mask(mask) => {
            grid.geometry().ensure_same_space(mask.geometry(), "normalization region")?;
            mask.data().to_vec()
        }
        NormRegion::WholeGrid => vec![true; grid.data().len()],
        NormRegion::Nonzero => grid.data().iter().map(|&v| v != 0.0).collect(),
    };
    let values: Vec<f64> = grid
        .data()
        .iter()
        .zip(&inside)
        .filter_map(|(&v, &keep)| keep.then_some(v))
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument("normalization region is empty".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = !(std > 0.0);
    let out = grid.map_values(Intensity::Normalized, |i, v| {
        if !inside[i] || degenerate {
            0.0
        } else {
            (v - mean) / std
        }
    })?;
    Ok(Normalized { grid: out, mean, std, degenerate })
}

/// Skull-strip: keep `grid` where `brain` is set, 0 elsewhere.
pub fn apply_mask(grid: &VoxelGrid, brain: &BinaryMask) -> Result<VoxelGrid> {
    grid.geometry().ensure_same_space(brain.geometry(), "apply_mask")?;
    grid.map_values(grid.kind(), |i, v| if brain.data()[i] { v } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iso(shape: [usize; 3], s: f64) -> GridGeometry {
        GridGeometry::with_spacing(shape, [s; 3]).unwrap()
    }

    fn ramp(shape: [usize; 3]) -> VoxelGrid {
        let g = iso(shape, 1.0);
        VoxelGrid::from_fn(g, Intensity::Raw, |[x, y, z]| (x + 10 * y + 100 * z) as f64).unwrap()
    }

    #[test]
    fn resample_to_own_spacing_is_identity() {
        let g = ramp([5, 4, 3]);
        for mode in [Interpolation::Trilinear, Interpolation::Nearest] {
            let out = resample(&g, [1.0; 3], mode).unwrap();
            assert_eq!(out.geometry(), g.geometry());
            assert_eq!(out.data(), g.data());
        }
    }

    #[test]
    fn constant_grid_downsampled() {
        let g = VoxelGrid::filled(iso([8, 8, 8], 1.0), 3.25, Intensity::Raw).unwrap();
        let out = resample(&g, [2.0; 3], Interpolation::Trilinear).unwrap();
        assert_eq!(out.geometry().shape(), [4, 4, 4]);
        assert_eq!(out.geometry().spacing(), [2.0; 3]);
        assert!(out.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn ramp_matches_closed_form_linear_interpolation() {
        // x-ramp [0, 1, 2, 3] at 1 mm; 2 mm output centres sit on source x = 0 and 2.
        let g = VoxelGrid::new(iso([4, 1, 1], 1.0), vec![0.0, 1.0, 2.0, 3.0], Intensity::Raw).unwrap();
        let out = resample(&g, [2.0, 1.0, 1.0], Interpolation::Trilinear).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
        assert_eq!(out.geometry().origin(), [0.0; 3]);
        // 2/3 mm output: centres at x = 0, 2/3, 4/3, 2, 8/3, 10/3 -> clamped at 3
        let out = resample(&g, [2.0 / 3.0, 1.0, 1.0], Interpolation::Trilinear).unwrap();
        assert_eq!(out.geometry().shape(), [6, 1, 1]);
        let expected = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0, 8.0 / 3.0, 3.0];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn resample_rejects_bad_spacing() {
        let g = ramp([2, 2, 2]);
        let err = resample(&g, [1.0, 0.0, 1.0], Interpolation::Nearest).unwrap_err();
        assert_eq!(err.kind(), "invalid-argument");
    }

    #[test]
    fn resize_preserves_extent() {
        let g = VoxelGrid::filled(iso([64, 64, 64], 2.0), 1.0, Intensity::Raw).unwrap();
        let out = resize_to(&g, [128, 128, 144], Interpolation::Trilinear).unwrap();
        let sp = out.geometry().spacing();
        assert_eq!(sp[0], 1.0);
        assert_eq!(sp[1], 1.0);
        assert!((sp[2] - 64.0 * 2.0 / 144.0).abs() < 1e-12);
        assert!(out.data().iter().all(|&v| v == 1.0));
        assert!(resize_to(&g, [0, 1, 1], Interpolation::Nearest).is_err());
    }

    #[test]
    fn resize_identity_and_nearest_mask() {
        let g = ramp([3, 4, 5]);
        let out = resize_to(&g, [3, 4, 5], Interpolation::Trilinear).unwrap();
        assert_eq!(out, g);
        let mask = BinaryMask::from_fn(iso([5, 5, 5], 1.0), |[x, y, z]| (x + y + z) % 3 == 0);
        let out = resize_to(&mask.to_grid(Intensity::Raw), [7, 3, 9], Interpolation::Nearest).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn normalize_examples() {
        let g = VoxelGrid::new(iso([2, 1, 1], 1.0), vec![-1.0, 1.0], Intensity::Raw).unwrap();
        let n = zero_mean_normalize(&g, NormRegion::WholeGrid).unwrap();
        assert_eq!(n.grid.data(), &[-1.0, 1.0]);
        assert!(!n.degenerate);

        let g = VoxelGrid::filled(iso([2, 2, 2], 1.0), 7.0, Intensity::Raw).unwrap();
        let n = zero_mean_normalize(&g, NormRegion::WholeGrid).unwrap();
        assert!(n.degenerate);
        assert!(n.grid.data().iter().all(|&v| v == 0.0));

        // oracle: mean 2, population std sqrt(8/3)
        let g = VoxelGrid::new(iso([4, 1, 1], 1.0), vec![0.0, 2.0, 4.0, 9.0], Intensity::Raw).unwrap();
        let region = BinaryMask::new(g.geometry().clone(), vec![true, true, true, false]).unwrap();
        let n = zero_mean_normalize(&g, NormRegion::Mask(&region)).unwrap();
        let s = (8.0f64 / 3.0).sqrt();
        let expected = [-2.0 / s, 0.0, 2.0 / s, 0.0];
        for (a, b) in n.grid.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((n.grid.data()[0] + 1.2247).abs() < 1e-4);
        assert_eq!(n.grid.kind(), Intensity::Normalized);
    }

    #[test]
    fn normalize_empty_region_is_an_error() {
        let g = VoxelGrid::filled(iso([2, 2, 2], 1.0), 0.0, Intensity::Raw).unwrap();
        assert!(zero_mean_normalize(&g, NormRegion::Nonzero).is_err());
        let empty = BinaryMask::empty(g.geometry().clone());
        assert!(zero_mean_normalize(&g, NormRegion::Mask(&empty)).is_err());
    }

    #[test]
    fn apply_mask_cases() {
        let g = ramp([4, 3, 2]);
        let all = BinaryMask::full(g.geometry().clone());
        assert_eq!(apply_mask(&g, &all).unwrap(), g);
        let none = BinaryMask::empty(g.geometry().clone());
        assert!(apply_mask(&g, &none).unwrap().data().iter().all(|&v| v == 0.0));
        let half = BinaryMask::from_fn(g.geometry().clone(), |[x, _, _]| x < 2);
        let out = apply_mask(&g, &half).unwrap();
        for i in 0..g.data().len() {
            let [x, _, _] = g.geometry().coords(i);
            let expected = if x < 2 { g.data()[i] } else { 0.0 };
            assert_eq!(out.data()[i], expected);
        }
        let other = BinaryMask::full(iso([4, 3, 3], 1.0));
        assert_eq!(apply_mask(&g, &other).unwrap_err().kind(), "incompatible-grids");
    }

    #[test]
    fn reference_identity_and_shift() {
        let g = ramp([5, 3, 2]);
        let out = resample_to_reference(&g, g.geometry(), Interpolation::Trilinear).unwrap();
        assert_eq!(out, g);

        // reference shifted by +1 voxel along x: output[x] = input[x + 1], last column empty
        let reference = GridGeometry::with_spacing_and_origin([5, 3, 2], [1.0; 3], [1.0, 0.0, 0.0]).unwrap();
        for mode in [Interpolation::Trilinear, Interpolation::Nearest] {
            let out = resample_to_reference(&g, &reference, mode).unwrap();
            for i in 0..reference.len() {
                let [x, y, z] = reference.coords(i);
                let expected = if x + 1 < 5 { g.get(x + 1, y, z) } else { 0.0 };
                assert_eq!(out.data()[i], expected, "voxel {x},{y},{z}");
            }
        }
    }

    #[test]
    fn constant_moving_grid_zero_outside_overlap() {
        let g = VoxelGrid::filled(iso([4, 4, 4], 1.0), 5.0, Intensity::Raw).unwrap();
        let reference = GridGeometry::with_spacing_and_origin([4, 4, 4], [1.0; 3], [-2.0, 0.3, 0.0]).unwrap();
        let out = resample_to_reference(&g, &reference, Interpolation::Trilinear).unwrap();
        for i in 0..reference.len() {
            let [x, _, _] = reference.coords(i);
            let expected = if x >= 2 { 5.0 } else { 0.0 };
            assert_eq!(out.data()[i], expected);
        }
    }

    #[test]
    fn mask_resampling_stays_binary() {
        let m = BinaryMask::from_fn(iso([6, 6, 6], 1.0), |[x, y, _]| x > y);
        let reference = GridGeometry::with_spacing_and_origin([5, 7, 4], [1.3, 0.8, 1.5], [0.4, -0.2, 0.7]).unwrap();
        let out = resample_mask_to_reference(&m, &reference).unwrap();
        assert_eq!(out.geometry(), &reference);
    }

    proptest! {
        #[test]
        fn constant_invariant_under_resampling(
            value in -1.0e3f64..1.0e3,
            shape in prop::array::uniform3(1usize..7),
            spacing in prop::array::uniform3(0.3f64..3.0),
            target in prop::array::uniform3(0.3f64..3.0),
            nearest in any::<bool>(),
        ) {
            let g = VoxelGrid::filled(GridGeometry::with_spacing(shape, spacing).unwrap(), value, Intensity::Raw).unwrap();
            let mode = if nearest { Interpolation::Nearest } else { Interpolation::Trilinear };
            let out = resample(&g, target, mode).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == value));
            prop_assert_eq!(out.geometry().spacing(), target);
        }

        #[test]
        fn resize_extent_is_preserved(
            shape in prop::array::uniform3(1usize..9),
            spacing in prop::array::uniform3(0.3f64..3.0),
            target in prop::array::uniform3(1usize..12),
        ) {
            let g = VoxelGrid::filled(GridGeometry::with_spacing(shape, spacing).unwrap(), 1.0, Intensity::Raw).unwrap();
            let out = resize_to(&g, target, Interpolation::Trilinear).unwrap();
            for a in 0..3 {
                let before = shape[a] as f64 * spacing[a];
                let after = target[a] as f64 * out.geometry().spacing()[a];
                prop_assert!((before - after).abs() <= 1e-9 * before);
            }
        }

        #[test]
        fn nearest_keeps_mask_values(
            bits in prop::collection::vec(any::<bool>(), 64),
            target in prop::array::uniform3(0.4f64..2.5),
        ) {
            let m = BinaryMask::new(iso([4, 4, 4], 1.0), bits).unwrap();
            let out = resample(&m.to_grid(Intensity::Raw), target, Interpolation::Nearest).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }

        #[test]
        fn normalized_region_has_zero_mean_unit_std(values in prop::collection::vec(-100.0f64..100.0, 2..64)) {
            let n = values.len();
            let distinct = values.iter().any(|&v| v != values[0]);
            let g = VoxelGrid::new(iso([n, 1, 1], 1.0), values, Intensity::Raw).unwrap();
            let out = zero_mean_normalize(&g, NormRegion::WholeGrid).unwrap();
            if distinct && out.std > 1e-9 {
                let d = out.grid.data();
                let mean = d.iter().sum::<f64>() / n as f64;
                let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                prop_assert!(mean.abs() < 1e-5);
                prop_assert!((std - 1.0).abs() < 1e-5);
            }
        }
    }
}

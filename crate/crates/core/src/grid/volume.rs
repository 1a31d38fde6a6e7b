use crate::error::{Error, Result};
use crate::grid::GridGeometry;

/// What the scalar values of a [`VoxelGrid`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intensity {
    Raw,
    Normalized,
    /// Values constrained to `[0, 1]`.
    Probability,
}

/// Dense scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    geometry: GridGeometry,
    data: Vec<f64>,
    kind: Intensity,
}

impl VoxelGrid {
    pub fn new(geometry: GridGeometry, data: Vec<f64>, kind: Intensity) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidArgument(format!(
                "data has {} elements but shape {:?} needs {}",
                data.len(),
                geometry.shape(),
                geometry.len()
            )));
        }
        check_kind(&data, kind)?;
        Ok(Self { geometry, data, kind })
    }

    pub fn filled(geometry: GridGeometry, value: f64, kind: Intensity) -> Result<Self> {
        let data = vec![value; geometry.len()];
        Self::new(geometry, data, kind)
    }

    pub fn from_fn(
        geometry: GridGeometry,
        kind: Intensity,
        mut f: impl FnMut([usize; 3]) -> f64,
    ) -> Result<Self> {
        let data = (0..geometry.len()).map(|i| f(geometry.coords(i))).collect();
        Self::new(geometry, data, kind)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn kind(&self) -> Intensity {
        self.kind
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// Re-tag the grid, validating the value range the new tag implies.
    pub fn with_kind(self, kind: Intensity) -> Result<Self> {
        check_kind(&self.data, kind)?;
        Ok(Self { kind, ..self })
    }

    pub fn is_probability(&self) -> bool {
        self.kind == Intensity::Probability
    }

    pub(crate) fn map_values(&self, kind: Intensity, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        Self::new(self.geometry.clone(), data, kind)
    }
}

fn check_kind(data: &[f64], kind: Intensity) -> Result<()> {
    if kind == Intensity::Probability {
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "probability grid contains value {bad} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Dense `{0, 1}` volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    geometry: GridGeometry,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: GridGeometry, data: Vec<bool>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} elements but shape {:?} needs {}",
                data.len(),
                geometry.shape(),
                geometry.len()
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        let data = vec![false; geometry.len()];
        Self { geometry, data }
    }

    pub fn full(geometry: GridGeometry) -> Self {
        let data = vec![true; geometry.len()];
        Self { geometry, data }
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let data = (0..geometry.len()).map(|i| f(geometry.coords(i))).collect();
        Self { geometry, data }
    }

    /// Mask of the voxels of `grid` strictly above `level`.
    pub fn from_grid_above(grid: &VoxelGrid, level: f64) -> Self {
        let data = grid.data().iter().map(|&v| v > level).collect();
        Self { geometry: grid.geometry().clone(), data }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geometry.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.geometry.index(x, y, z);
        self.data[i] = value;
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn volume_ml(&self) -> f64 {
        self.geometry.volume_ml(self.count())
    }

    /// Foreground voxels shared with `other`.
    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.geometry.ensure_same_space(&other.geometry, "mask intersection")?;
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !a || *b)
    }

    /// Hard 0/1 values in a scalar grid of the given kind.
    pub fn to_grid(&self, kind: Intensity) -> VoxelGrid {
        let data = self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        VoxelGrid { geometry: self.geometry.clone(), data, kind }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> GridGeometry {
        GridGeometry::with_spacing([2, 3, 4], [1.0; 3]).unwrap()
    }

    #[test]
    fn probability_range_is_enforced() {
        assert!(VoxelGrid::filled(geom(), 1.5, Intensity::Probability).is_err());
        assert!(VoxelGrid::filled(geom(), 1.5, Intensity::Raw).is_ok());
        let g = VoxelGrid::filled(geom(), -2.0, Intensity::Raw).unwrap();
        assert!(g.with_kind(Intensity::Probability).is_err());
    }

    #[test]
    fn element_count_must_match_shape() {
        assert!(VoxelGrid::new(geom(), vec![0.0; 23], Intensity::Raw).is_err());
        assert!(BinaryMask::new(geom(), vec![false; 25]).is_err());
    }

    #[test]
    fn mask_counts_and_volume() {
        let mut m = BinaryMask::empty(geom());
        m.set(1, 2, 3, true);
        m.set(0, 0, 0, true);
        assert_eq!(m.count(), 2);
        assert_eq!(m.volume_ml(), 0.002);
        let full = BinaryMask::full(geom());
        assert_eq!(m.intersection_count(&full).unwrap(), 2);
        assert!(m.is_subset_of(&full));
        assert!(!full.is_subset_of(&m));
    }
}

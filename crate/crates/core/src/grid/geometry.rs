use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};

/// Relative tolerance between affine column norms and the declared spacing.
const SPACING_REL_TOL: f64 = 1e-6;

/// Tolerance used when deciding whether two grids live in the same space.
const SAME_SPACE_TOL: f64 = 1e-5;

/// Shape, spacing and voxel-to-physical mapping of a 3D grid.
///
/// Voxel `(x, y, z)` is stored at linear index `x + nx * (y + ny * z)`; the
/// affine maps voxel *centres* to physical millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    shape: [usize; 3],
    spacing: [f64; 3],
    affine: [[f64; 4]; 4],
}

impl GridGeometry {
    /// Axis-aligned geometry with its first voxel centred on the physical origin.
    pub fn with_spacing(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_spacing_and_origin(shape, spacing, [0.0; 3])
    }

    pub fn with_spacing_and_origin(
        shape: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
    ) -> Result<Self> {
        let mut affine = [[0.0; 4]; 4];
        for axis in 0..3 {
            affine[axis][axis] = spacing[axis];
            affine[axis][3] = origin[axis];
        }
        affine[3][3] = 1.0;
        Self::from_parts(shape, spacing, affine)
    }

    /// Geometry from an affine alone; spacing is taken from the column norms.
    pub fn from_affine(shape: [usize; 3], affine: [[f64; 4]; 4]) -> Result<Self> {
        let spacing = column_norms(&affine);
        Self::from_parts(shape, spacing, affine)
    }

    pub fn from_parts(
        shape: [usize; 3],
        spacing: [f64; 3],
        affine: [[f64; 4]; 4],
    ) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidGeometry(format!("shape {shape:?} has a zero axis")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing {spacing:?} must be finite and positive"
            )));
        }
        if affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("affine has non-finite entries".into()));
        }
        let norms = column_norms(&affine);
        for axis in 0..3 {
            if (norms[axis] - spacing[axis]).abs() > SPACING_REL_TOL * spacing[axis] {
                return Err(Error::InvalidGeometry(format!(
                    "affine column {axis} has norm {} but spacing is {}",
                    norms[axis], spacing[axis]
                )));
            }
        }
        let geometry = Self { shape, spacing, affine };
        let m = geometry.matrix();
        let det = m.fixed_view::<3, 3>(0, 0).determinant();
        let normalized_det = det / (spacing[0] * spacing[1] * spacing[2]);
        if normalized_det.abs() < 1e-6 {
            return Err(Error::InvalidGeometry("affine is singular".into()));
        }
        Ok(geometry)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    /// Physical position of the centre of voxel `(0, 0, 0)`.
    pub fn origin(&self) -> [f64; 3] {
        [self.affine[0][3], self.affine[1][3], self.affine[2][3]]
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.shape;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|r, c| self.affine[r][c])
    }

    pub fn inverse_matrix(&self) -> Result<Matrix4<f64>> {
        self.matrix()
            .try_inverse()
            .ok_or_else(|| Error::InvalidGeometry("affine is not invertible".into()))
    }

    pub fn index_to_physical(&self, index: [f64; 3]) -> [f64; 3] {
        let p = self.matrix() * Vector4::new(index[0], index[1], index[2], 1.0);
        [p[0], p[1], p[2]]
    }

    /// Volume of one voxel in millilitres.
    pub fn voxel_volume_ml(&self) -> f64 {
        self.volume_ml(1)
    }

    /// Volume of `voxels` voxels in millilitres.
    ///
    /// All volume figures in the crate go through here so that voxel counts
    /// and ml thresholds agree everywhere.
    pub fn volume_ml(&self, voxels: usize) -> f64 {
        let voxel_mm3 = self.spacing[0] * self.spacing[1] * self.spacing[2];
        voxels as f64 * voxel_mm3 / 1000.0
    }

    /// Same shape and (numerically) the same voxel-to-physical mapping.
    pub fn same_space(&self, other: &GridGeometry) -> bool {
        self.shape == other.shape
            && self
                .affine
                .iter()
                .flatten()
                .zip(other.affine.iter().flatten())
                .all(|(a, b)| (a - b).abs() <= SAME_SPACE_TOL * a.abs().max(b.abs()).max(1.0))
    }

    pub fn ensure_same_space(&self, other: &GridGeometry, context: &str) -> Result<()> {
        if self.same_space(other) {
            Ok(())
        } else {
            Err(Error::IncompatibleGrids(format!(
                "{context}: shapes {:?} vs {:?} or affines differ",
                self.shape, other.shape
            )))
        }
    }

    /// Copy of this geometry with a new shape, spacing and origin, keeping the
    /// axis directions.
    pub(crate) fn respaced(
        &self,
        shape: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
    ) -> Result<Self> {
        let mut affine = self.affine;
        for axis in 0..3 {
            let factor = spacing[axis] / self.spacing[axis];
            for row in affine.iter_mut().take(3) {
                row[axis] *= factor;
            }
        }
        for (row, o) in affine.iter_mut().zip(origin) {
            row[3] = o;
        }
        Self::from_parts(shape, spacing, affine)
    }
}

// All entries are finite by construction.
impl Eq for GridGeometry {}

/// Volume of a single voxel of `geometry` in millilitres.
pub fn voxel_volume_ml(geometry: &GridGeometry) -> f64 {
    geometry.voxel_volume_ml()
}

fn column_norms(affine: &[[f64; 4]; 4]) -> [f64; 3] {
    let mut norms = [0.0; 3];
    for (axis, norm) in norms.iter_mut().enumerate() {
        *norm = (0..3).map(|r| affine[r][axis] * affine[r][axis]).sum::<f64>().sqrt();
    }
    norms
}

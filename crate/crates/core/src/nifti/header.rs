use std::io::Cursor;

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::GridGeometry;

pub const HEADER_SIZE: usize = 348;
/// Payload offset used for single-file output (header + 4-byte extender).
pub const SINGLE_FILE_OFFSET: usize = 352;
pub const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIRED: &[u8; 4] = b"ni1\0";

const NIFTI_UNITS_MM: u8 = 2;
const XFORM_SCANNER_ANAT: i16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// Voxel storage types accepted on read and write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl DataType {
    pub const ALL: [DataType; 5] = [Self::U8, Self::I16, Self::I32, Self::F32, Self::F64];

    pub fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::I32 => 8,
            Self::F32 => 16,
            Self::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Self::U8,
            4 => Self::I16,
            8 => Self::I32,
            16 => Self::F32,
            64 => Self::F64,
            other => {
                return Err(Error::UnsupportedFormat(format!("NIfTI datatype code {other}")))
            }
        })
    }

    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I16 => 2,
            Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    pub fn bitpix(self) -> i16 {
        (self.size() * 8) as i16
    }
}

/// The 348-byte NIfTI-1 header.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub data_type: [u8; 10],
    pub db_name: [u8; 18],
    pub extents: i32,
    pub session_error: i16,
    pub regular: u8,
    pub dim_info: u8,
    pub dim: [i16; 8],
    pub intent_p: [f32; 3],
    pub intent_code: i16,
    pub datatype: i16,
    pub bitpix: i16,
    pub slice_start: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub slice_end: i16,
    pub slice_code: u8,
    pub xyzt_units: u8,
    pub cal_max: f32,
    pub cal_min: f32,
    pub slice_duration: f32,
    pub toffset: f32,
    pub glmax: i32,
    pub glmin: i32,
    pub descrip: [u8; 80],
    pub aux_file: [u8; 24],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub intent_name: [u8; 16],
    pub magic: [u8; 4],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            sizeof_hdr: HEADER_SIZE as i32,
            data_type: [0; 10],
            db_name: [0; 18],
            extents: 0,
            session_error: 0,
            regular: 0,
            dim_info: 0,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            intent_p: [0.0; 3],
            intent_code: 0,
            datatype: DataType::F32.code(),
            bitpix: DataType::F32.bitpix(),
            slice_start: 0,
            pixdim: [1.0; 8],
            vox_offset: SINGLE_FILE_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            slice_end: 0,
            slice_code: 0,
            xyzt_units: NIFTI_UNITS_MM,
            cal_max: 0.0,
            cal_min: 0.0,
            slice_duration: 0.0,
            toffset: 0.0,
            glmax: 0,
            glmin: 0,
            descrip: [0; 80],
            aux_file: [0; 24],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
            intent_name: [0; 16],
            magic: *MAGIC_SINGLE,
        }
    }
}

fn read_array<const N: usize>(c: &mut Cursor<&[u8]>) -> [u8; N] {
    let mut out = [0u8; N];
    let pos = c.position() as usize;
    out.copy_from_slice(&c.get_ref()[pos..pos + N]);
    c.set_position((pos + N) as u64);
    out
}

impl NiftiHeader {
    /// Parse the first 348 bytes of `bytes`, detecting byte order from `sizeof_hdr`.
    pub fn parse(bytes: &[u8]) -> Result<(Self, Endianness)> {
        if bytes.len() < 4 {
            return Err(Error::NotNifti(format!("only {} bytes", bytes.len())));
        }
        let endian = if LittleEndian::read_i32(bytes) == HEADER_SIZE as i32 {
            Endianness::Little
        } else if BigEndian::read_i32(bytes) == HEADER_SIZE as i32 {
            Endianness::Big
        } else {
            return Err(Error::NotNifti(format!(
                "sizeof_hdr is {} (expected 348 in either byte order)",
                LittleEndian::read_i32(bytes)
            )));
        };
        if bytes.len() < HEADER_SIZE {
            return Err(Error::CorruptFile(format!(
                "header truncated at {} of {HEADER_SIZE} bytes",
                bytes.len()
            )));
        }
        let header = match endian {
            Endianness::Little => Self::parse_with::<LittleEndian>(&bytes[..HEADER_SIZE]),
            Endianness::Big => Self::parse_with::<BigEndian>(&bytes[..HEADER_SIZE]),
        }?;
        header.validate()?;
        Ok((header, endian))
    }

    fn parse_with<B: ByteOrder>(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let mut h = Self {
            sizeof_hdr: c.read_i32::<B>()?,
            data_type: read_array(&mut c),
            db_name: read_array(&mut c),
            extents: c.read_i32::<B>()?,
            session_error: c.read_i16::<B>()?,
            regular: c.read_u8()?,
            dim_info: c.read_u8()?,
            ..Self::default()
        };
        c.read_i16_into::<B>(&mut h.dim)?;
        c.read_f32_into::<B>(&mut h.intent_p)?;
        h.intent_code = c.read_i16::<B>()?;
        h.datatype = c.read_i16::<B>()?;
        h.bitpix = c.read_i16::<B>()?;
        h.slice_start = c.read_i16::<B>()?;
        c.read_f32_into::<B>(&mut h.pixdim)?;
        h.vox_offset = c.read_f32::<B>()?;
        h.scl_slope = c.read_f32::<B>()?;
        h.scl_inter = c.read_f32::<B>()?;
        h.slice_end = c.read_i16::<B>()?;
        h.slice_code = c.read_u8()?;
        h.xyzt_units = c.read_u8()?;
        h.cal_max = c.read_f32::<B>()?;
        h.cal_min = c.read_f32::<B>()?;
        h.slice_duration = c.read_f32::<B>()?;
        h.toffset = c.read_f32::<B>()?;
        h.glmax = c.read_i32::<B>()?;
        h.glmin = c.read_i32::<B>()?;
        h.descrip = read_array(&mut c);
        h.aux_file = read_array(&mut c);
        h.qform_code = c.read_i16::<B>()?;
        h.sform_code = c.read_i16::<B>()?;
        c.read_f32_into::<B>(&mut h.quatern)?;
        c.read_f32_into::<B>(&mut h.qoffset)?;
        for row in h.srow.iter_mut() {
            c.read_f32_into::<B>(row)?;
        }
        h.intent_name = read_array(&mut c);
        h.magic = read_array(&mut c);
        debug_assert_eq!(c.position() as usize, HEADER_SIZE);
        Ok(h)
    }

    pub fn to_bytes(&self, endian: Endianness) -> Vec<u8> {
        match endian {
            Endianness::Little => self.write_with::<LittleEndian>(),
            Endianness::Big => self.write_with::<BigEndian>(),
        }
        .expect("writing into a Vec")
    }

    fn write_with<B: ByteOrder>(&self) -> std::io::Result<Vec<u8>> {
        let mut w = Vec::with_capacity(HEADER_SIZE);
        {
            w.write_i32::<B>(self.sizeof_hdr)?;
            w.extend_from_slice(&self.data_type);
            w.extend_from_slice(&self.db_name);
            w.write_i32::<B>(self.extents)?;
            w.write_i16::<B>(self.session_error)?;
            w.write_u8(self.regular)?;
            w.write_u8(self.dim_info)?;
            for d in self.dim {
                w.write_i16::<B>(d)?;
            }
            for p in self.intent_p {
                w.write_f32::<B>(p)?;
            }
            w.write_i16::<B>(self.intent_code)?;
            w.write_i16::<B>(self.datatype)?;
            w.write_i16::<B>(self.bitpix)?;
            w.write_i16::<B>(self.slice_start)?;
            for p in self.pixdim {
                w.write_f32::<B>(p)?;
            }
            w.write_f32::<B>(self.vox_offset)?;
            w.write_f32::<B>(self.scl_slope)?;
            w.write_f32::<B>(self.scl_inter)?;
            w.write_i16::<B>(self.slice_end)?;
            w.write_u8(self.slice_code)?;
            w.write_u8(self.xyzt_units)?;
            w.write_f32::<B>(self.cal_max)?;
            w.write_f32::<B>(self.cal_min)?;
            w.write_f32::<B>(self.slice_duration)?;
            w.write_f32::<B>(self.toffset)?;
            w.write_i32::<B>(self.glmax)?;
            w.write_i32::<B>(self.glmin)?;
            w.extend_from_slice(&self.descrip);
            w.extend_from_slice(&self.aux_file);
            w.write_i16::<B>(self.qform_code)?;
            w.write_i16::<B>(self.sform_code)?;
            for q in self.quatern.iter().chain(&self.qoffset) {
                w.write_f32::<B>(*q)?;
            }
            for v in self.srow.iter().flatten() {
                w.write_f32::<B>(*v)?;
            }
            w.extend_from_slice(&self.intent_name);
            w.extend_from_slice(&self.magic);
        }
        debug_assert_eq!(w.len(), HEADER_SIZE);
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        if &self.magic != MAGIC_SINGLE && &self.magic != MAGIC_PAIRED {
            return Err(Error::NotNifti(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&self.magic)
            )));
        }
        let rank = self.dim[0];
        if !(rank == 3 || rank == 4) {
            return Err(Error::UnsupportedFormat(format!("dim[0] = {rank}; only 3D volumes")));
        }
        if self.dim[1..=rank as usize].iter().any(|&d| d < 1) {
            return Err(Error::CorruptFile(format!("non-positive dimension in {:?}", self.dim)));
        }
        if rank == 4 && self.dim[4] != 1 {
            return Err(Error::UnsupportedFormat(format!(
                "4D volume with {} frames; only single-frame volumes",
                self.dim[4]
            )));
        }
        if self.pixdim[1..4].iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::CorruptFile(format!("spatial pixdim {:?} must be positive", &self.pixdim[1..4])));
        }
        Ok(())
    }

    pub fn is_single_file(&self) -> bool {
        &self.magic == MAGIC_SINGLE
    }

    pub fn data_type_code(&self) -> Result<DataType> {
        let dt = DataType::from_code(self.datatype)?;
        if self.bitpix != dt.bitpix() {
            return Err(Error::CorruptFile(format!(
                "bitpix {} does not match datatype {}",
                self.bitpix, self.datatype
            )));
        }
        Ok(dt)
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize]
    }

    /// Intensity scaling `(slope, intercept)`, or `None` when the slope disables it.
    pub fn scaling(&self) -> Option<(f64, f64)> {
        (self.scl_slope != 0.0 && self.scl_slope.is_finite())
            .then_some((self.scl_slope as f64, self.scl_inter as f64))
    }

    pub fn sform_affine(&self) -> Option<[[f64; 4]; 4]> {
        (self.sform_code > 0).then(|| {
            let mut a = [[0.0; 4]; 4];
            for (r, row) in self.srow.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    a[r][c] = *v as f64;
                }
            }
            a[3][3] = 1.0;
            a
        })
    }

    pub fn qform_affine(&self) -> Option<[[f64; 4]; 4]> {
        if self.qform_code <= 0 {
            return None;
        }
        let [b, c, d] = self.quatern.map(f64::from);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [
            self.pixdim[1] as f64,
            self.pixdim[2] as f64,
            self.pixdim[3] as f64 * qfac,
        ];
        let mut out = [[0.0; 4]; 4];
        for r in 0..3 {
            for col in 0..3 {
                out[r][col] = rot[r][col] * scale[col];
            }
            out[r][3] = self.qoffset[r] as f64;
        }
        out[3][3] = 1.0;
        Some(out)
    }

    pub fn pixdim_affine(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for axis in 0..3 {
            out[axis][axis] = self.pixdim[axis + 1] as f64;
        }
        out[3][3] = 1.0;
        out
    }

    /// Grid geometry from sform when set, else qform, else pixdim; any
    /// disagreement between sform and qform is reported in `warnings`.
    pub fn geometry(&self, warnings: &mut Vec<String>) -> Result<GridGeometry> {
        let shape = self.shape();
        let sform = self.sform_affine();
        let qform = self.qform_affine();
        if let (Some(s), Some(q)) = (&sform, &qform) {
            let disagree = s
                .iter()
                .flatten()
                .zip(q.iter().flatten())
                .any(|(a, b)| (a - b).abs() > 1e-3 * a.abs().max(b.abs()).max(1.0));
            if disagree {
                warnings.push("sform and qform disagree; using sform".to_string());
            }
        }
        let affine = sform.or(qform).unwrap_or_else(|| self.pixdim_affine());
        GridGeometry::from_affine(shape, affine)
            .map_err(|e| Error::CorruptFile(format!("header geometry: {e}")))
    }

    /// Header describing `geometry` stored as `dtype` in a single `.nii` file.
    pub fn for_geometry(geometry: &GridGeometry, dtype: DataType) -> Self {
        let [nx, ny, nz] = geometry.shape();
        let spacing = geometry.spacing();
        let affine = geometry.affine();
        let mut h = Self {
            dim: [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1],
            datatype: dtype.code(),
            bitpix: dtype.bitpix(),
            qform_code: XFORM_SCANNER_ANAT,
            sform_code: XFORM_SCANNER_ANAT,
            ..Self::default()
        };
        let descrip = b"resect-core";
        h.descrip[..descrip.len()].copy_from_slice(descrip);
        for r in 0..3 {
            for c in 0..4 {
                h.srow[r][c] = affine[r][c] as f32;
            }
        }
        let (quatern, qfac) = quaternion_from_affine(affine, spacing);
        h.quatern = quatern.map(|v| v as f32);
        h.qoffset = [affine[0][3] as f32, affine[1][3] as f32, affine[2][3] as f32];
        h.pixdim = [qfac as f32, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 1.0, 1.0, 1.0, 1.0];
        h
    }
}

/// Quaternion `(b, c, d)` and `qfac` of the rotation part of `affine`.
fn quaternion_from_affine(affine: &[[f64; 4]; 4], spacing: [f64; 3]) -> ([f64; 3], f64) {
    let mut r = [[0.0; 3]; 3];
    for (row, out) in r.iter_mut().enumerate() {
        for col in 0..3 {
            out[col] = affine[row][col] / spacing[col];
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    let qfac = if det < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
        -1.0
    } else {
        1.0
    };
    let trace = r[0][0] + r[1][1] + r[2][2] + 1.0;
    let (a, mut b, mut c, mut d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        let xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        let yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        let zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r[0][1] + r[1][0]) / b;
            d = 0.25 * (r[0][2] + r[2][0]) / b;
            a = 0.25 * (r[2][1] - r[1][2]) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r[0][1] + r[1][0]) / c;
            d = 0.25 * (r[1][2] + r[2][1]) / c;
            a = 0.25 * (r[0][2] - r[2][0]) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r[0][2] + r[2][0]) / d;
            c = 0.25 * (r[1][2] + r[2][1]) / d;
            a = 0.25 * (r[1][0] - r[0][1]) / d;
        }
        if a < 0.0 {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    ([b, c, d], qfac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_round_trip_both_orders() {
        let g = GridGeometry::with_spacing_and_origin([7, 5, 3], [0.5, 0.5, 1.0], [-10.0, 4.0, 2.5]).unwrap();
        let h = NiftiHeader::for_geometry(&g, DataType::I16);
        for endian in [Endianness::Little, Endianness::Big] {
            let bytes = h.to_bytes(endian);
            assert_eq!(bytes.len(), HEADER_SIZE);
            let (back, detected) = NiftiHeader::parse(&bytes).unwrap();
            assert_eq!(detected, endian);
            assert_eq!(back, h);
        }
    }

    #[test]
    fn swapped_sizeof_hdr_value() {
        let h = NiftiHeader::default();
        let bytes = h.to_bytes(Endianness::Big);
        assert_eq!(LittleEndian::read_i32(&bytes), 1_543_569_408);
    }

    #[test]
    fn bad_magic_is_not_nifti() {
        let mut h = NiftiHeader::default();
        h.magic = *b"xyz\0";
        let err = NiftiHeader::parse(&h.to_bytes(Endianness::Little)).unwrap_err();
        assert_eq!(err.kind(), "not-nifti");
    }

    #[test]
    fn qform_matches_sform_for_rotations() {
        let (s, c) = (0.4f64.sin(), 0.4f64.cos());
        for flip in [1.0, -1.0] {
            let affine = [
                [c * 0.9, 0.0, s * 1.2 * flip, 3.0],
                [0.0, 1.1, 0.0, -7.0],
                [-s * 0.9, 0.0, c * 1.2 * flip, 12.0],
                [0.0, 0.0, 0.0, 1.0],
            ];
            let g = GridGeometry::from_affine([4, 4, 4], affine).unwrap();
            let h = NiftiHeader::for_geometry(&g, DataType::F32);
            let q = h.qform_affine().unwrap();
            let s = h.sform_affine().unwrap();
            for (a, b) in q.iter().flatten().zip(s.iter().flatten()) {
                assert!((a - b).abs() < 1e-5, "{q:?} vs {s:?}");
            }
            let mut warnings = Vec::new();
            h.geometry(&mut warnings).unwrap();
            assert!(warnings.is_empty());
        }
    }

    #[test]
    fn sform_wins_with_warning() {
        let g = GridGeometry::with_spacing([2, 2, 2], [1.0; 3]).unwrap();
        let mut h = NiftiHeader::for_geometry(&g, DataType::F32);
        h.srow[0][3] = 50.0;
        let mut warnings = Vec::new();
        let geom = h.geometry(&mut warnings).unwrap();
        assert_eq!(geom.origin()[0], 50.0);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn falls_back_to_pixdim() {
        let mut h = NiftiHeader::default();
        h.dim = [3, 2, 3, 4, 1, 1, 1, 1];
        h.pixdim = [1.0, 0.5, 0.75, 2.0, 1.0, 1.0, 1.0, 1.0];
        let geom = h.geometry(&mut Vec::new()).unwrap();
        assert_eq!(geom.spacing(), [0.5, 0.75, 2.0]);
        assert_eq!(geom.shape(), [2, 3, 4]);
    }

    #[test]
    fn rejects_unsupported_layouts() {
        let mut h = NiftiHeader::default();
        h.dim = [5, 2, 2, 2, 1, 1, 1, 1];
        assert_eq!(NiftiHeader::parse(&h.to_bytes(Endianness::Little)).unwrap_err().kind(), "unsupported-format");
        h.dim = [4, 2, 2, 2, 3, 1, 1, 1];
        assert_eq!(NiftiHeader::parse(&h.to_bytes(Endianness::Little)).unwrap_err().kind(), "unsupported-format");
        h.dim = [3, 2, 2, 2, 1, 1, 1, 1];
        h.datatype = 512;
        let (h, _) = NiftiHeader::parse(&h.to_bytes(Endianness::Little)).unwrap();
        assert_eq!(h.data_type_code().unwrap_err().kind(), "unsupported-format");
    }
}

//! NIfTI-1 reading and writing (`.nii`, `.nii.gz`, and paired `.hdr`/`.img`).
//!
//! Files of either byte order are accepted on read; output is always a
//! little-endian single file with the payload at byte 352.

mod header;

pub use header::{DataType, Endianness, NiftiHeader, HEADER_SIZE, MAGIC_PAIRED, MAGIC_SINGLE, SINGLE_FILE_OFFSET};

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Intensity, VoxelGrid};

/// A decoded volume together with the header it came from.
#[derive(Debug, Clone)]
pub struct NiftiVolume {
    pub header: NiftiHeader,
    pub endianness: Endianness,
    pub grid: VoxelGrid,
    pub warnings: Vec<String>,
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if is_gzip(&raw) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::CorruptFile(format!("{}: gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Image file paired with a `.hdr` header.
fn paired_image_path(path: &Path) -> Result<PathBuf> {
    let name = path.to_string_lossy();
    let stem = name
        .strip_suffix(".hdr.gz")
        .or_else(|| name.strip_suffix(".hdr"))
        .ok_or_else(|| Error::UnsupportedFormat(format!("{name}: paired header without .hdr extension")))?;
    for candidate in [format!("{stem}.img"), format!("{stem}.img.gz")] {
        let p = PathBuf::from(&candidate);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::CorruptFile(format!("{name}: missing .img companion")))
}

/// Decode a volume from in-memory bytes. `image` carries the payload for
/// paired (`ni1`) files; single files keep it after the header.
pub fn decode(bytes: &[u8], image: Option<&[u8]>) -> Result<NiftiVolume> {
    let (header, endianness) = NiftiHeader::parse(bytes)?;
    let dtype = header.data_type_code()?;
    let mut warnings = Vec::new();
    let geometry = header.geometry(&mut warnings)?;
    let offset = header.vox_offset.max(0.0) as usize;
    let payload = if header.is_single_file() {
        if offset < HEADER_SIZE {
            return Err(Error::CorruptFile(format!("vox_offset {offset} inside the header")));
        }
        bytes.get(offset..).unwrap_or(&[])
    } else {
        let image = image.ok_or_else(|| Error::CorruptFile("paired header without image data".into()))?;
        image.get(offset..).unwrap_or(&[])
    };
    let count = geometry.len();
    let needed = count * dtype.size();
    if payload.len() < needed {
        return Err(Error::CorruptFile(format!(
            "payload truncated: {} of {needed} bytes",
            payload.len()
        )));
    }
    let mut data = match endianness {
        Endianness::Little => decode_payload::<LittleEndian>(&payload[..needed], dtype),
        Endianness::Big => decode_payload::<BigEndian>(&payload[..needed], dtype),
    };
    if let Some((slope, inter)) = header.scaling() {
        if (slope, inter) != (1.0, 0.0) {
            for v in data.iter_mut() {
                *v = *v * slope + inter;
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let grid = VoxelGrid::new(geometry, data, Intensity::Raw)?;
    Ok(NiftiVolume { header, endianness, grid, warnings })
}

fn decode_payload<B: ByteOrder>(bytes: &[u8], dtype: DataType) -> Vec<f64> {
    let step = dtype.size();
    bytes
        .chunks_exact(step)
        .map(|c| match dtype {
            DataType::U8 => c[0] as f64,
            DataType::I16 => B::read_i16(c) as f64,
            DataType::I32 => B::read_i32(c) as f64,
            DataType::F32 => B::read_f32(c) as f64,
            DataType::F64 => B::read_f64(c),
        })
        .collect()
}

/// Read a volume and its header.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let (header, _) = NiftiHeader::parse(&bytes)?;
    if header.is_single_file() {
        decode(&bytes, None)
    } else {
        let image = read_maybe_gz(&paired_image_path(path)?)?;
        decode(&bytes, Some(&image))
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    Ok(read_nifti(path)?.grid)
}

/// Read a volume and binarize it: values above 0.5 (after scaling) are foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let grid = read_volume(path)?;
    Ok(BinaryMask::from_grid_above(&grid, 0.5))
}

/// Read a probability map, rejecting values outside `[0, 1]`.
pub fn read_probability(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    read_volume(path)?.with_kind(Intensity::Probability)
}

/// Encode `grid` as a single-file NIfTI-1 byte stream. Integer types round
/// to nearest and saturate at the type bounds.
pub fn encode(grid: &VoxelGrid, dtype: DataType, endianness: Endianness) -> Vec<u8> {
    let header = NiftiHeader::for_geometry(grid.geometry(), dtype);
    let mut out = header.to_bytes(endianness);
    out.extend_from_slice(&[0u8; SINGLE_FILE_OFFSET - HEADER_SIZE]);
    match endianness {
        Endianness::Little => encode_payload::<LittleEndian>(grid.data(), dtype, &mut out),
        Endianness::Big => encode_payload::<BigEndian>(grid.data(), dtype, &mut out),
    }
    out
}

fn encode_payload<B: ByteOrder>(data: &[f64], dtype: DataType, out: &mut Vec<u8>) {
    let mut buf = [0u8; 8];
    let step = dtype.size();
    out.reserve(data.len() * step);
    for &v in data {
        match dtype {
            DataType::U8 => buf[0] = v.round() as u8,
            DataType::I16 => B::write_i16(&mut buf, v.round() as i16),
            DataType::I32 => B::write_i32(&mut buf, v.round() as i32),
            DataType::F32 => B::write_f32(&mut buf, v as f32),
            DataType::F64 => B::write_f64(&mut buf, v),
        }
        out.extend_from_slice(&buf[..step]);
    }
}

fn write_bytes(bytes: &[u8], path: &Path) -> Result<()> {
    let gz = path.to_string_lossy().ends_with(".gz");
    let file = fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    if gz {
        let mut enc = GzEncoder::new(writer, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?.flush()?;
    } else {
        writer.write_all(bytes)?;
        writer.flush()?;
    }
    Ok(())
}

/// Write `grid` as little-endian NIfTI-1, gzip-compressed when the path ends in `.gz`.
pub fn write_volume(grid: &VoxelGrid, path: impl AsRef<Path>, dtype: DataType) -> Result<()> {
    write_bytes(&encode(grid, dtype, Endianness::Little), path.as_ref())
}

/// Write a mask as uint8 `{0, 1}`.
pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_volume(&mask.to_grid(Intensity::Raw), path, DataType::U8)
}

//! Minimal single-file NIfTI-1 reader (`.nii`, uncompressed, 3D only).

use super::{LabelVolume, Volume3D, VolumeError};
use std::path::{Path, PathBuf};

const HEADER_SIZE: usize = 348;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated NIfTI file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("bad header size field {0} (expected 348)")]
    BadHeaderSize(i32),
    #[error("bad NIfTI magic {0:?} (expected \"n+1\\0\")")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0} (supported: uint8, int16, float32)")]
    UnsupportedDatatype(i16),
    #[error("expected a 3D image, dim[0] = {0}")]
    NotThreeDimensional(i16),
    #[error("invalid vox_offset {0}")]
    BadOffset(f32),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

struct Header {
    dims: (usize, usize, usize),
    datatype: i16,
    pixdim: [f32; 3],
    vox_offset: usize,
    slope: f32,
    inter: f32,
}

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().expect("4 bytes");
        if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_bits(self.i32(at) as u32)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Header, bool), NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated { expected: HEADER_SIZE, actual: bytes.len() });
    }
    let mut r = Reader { bytes, big_endian: false };
    let size = r.i32(0);
    if size != HEADER_SIZE as i32 {
        r.big_endian = true;
        if r.i32(0) != HEADER_SIZE as i32 {
            return Err(NiftiError::BadHeaderSize(size));
        }
    }
    let magic: [u8; 4] = bytes[344..348].try_into().expect("4 bytes");
    if &magic != b"n+1\0" {
        return Err(NiftiError::BadMagic(magic));
    }
    let ndim = r.i16(40);
    if ndim != 3 {
        return Err(NiftiError::NotThreeDimensional(ndim));
    }
    let dim = |i: usize| r.i16(40 + 2 * i).max(0) as usize;
    let datatype = r.i16(70);
    if !matches!(datatype, DT_UINT8 | DT_INT16 | DT_FLOAT32) {
        return Err(NiftiError::UnsupportedDatatype(datatype));
    }
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(NiftiError::BadOffset(vox_offset));
    }
    let header = Header {
        dims: (dim(1), dim(2), dim(3)),
        datatype,
        pixdim: [r.f32(80), r.f32(84), r.f32(88)],
        vox_offset: vox_offset as usize,
        slope: r.f32(112),
        inter: r.f32(116),
    };
    Ok((header, r.big_endian))
}

fn decode_raw(bytes: &[u8]) -> Result<(Header, Vec<f64>), NiftiError> {
    let (h, big_endian) = parse_header(bytes)?;
    let n = h.dims.0 * h.dims.1 * h.dims.2;
    let width = match h.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        _ => 4,
    };
    let end = h.vox_offset + n * width;
    if bytes.len() < end {
        return Err(NiftiError::Truncated { expected: end, actual: bytes.len() });
    }
    let r = Reader { bytes, big_endian };
    let values = (0..n)
        .map(|i| {
            let at = h.vox_offset + i * width;
            match h.datatype {
                DT_UINT8 => bytes[at] as f64,
                DT_INT16 => r.i16(at) as f64,
                _ => r.f32(at) as f64,
            }
        })
        .collect();
    Ok((h, values))
}

/// Parses an in-memory `.nii` image into a scalar volume, applying the
/// intensity scaling fields when they are set.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume3D, NiftiError> {
    let (h, raw) = decode_raw(bytes)?;
    let scale = h.slope != 0.0 && h.slope.is_finite() && h.inter.is_finite();
    let data = raw.into_iter().map(|v| if scale { v * h.slope as f64 + h.inter as f64 } else { v } as f32).collect();
    let spacing = h.pixdim.map(|p| if p > 0.0 { p } else { 1.0 });
    Ok(Volume3D::new(h.dims, data)?.with_spacing(spacing))
}

fn read(path: &Path) -> Result<Vec<u8>, NiftiError> {
    std::fs::read(path).map_err(|source| NiftiError::Io { path: path.to_path_buf(), source })
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume3D, NiftiError> {
    parse_nifti(&read(path.as_ref())?)
}

/// Loads a tissue segmentation; voxel values must be integral codes 0..=3.
pub fn load_nifti_labels(path: impl AsRef<Path>) -> Result<LabelVolume, NiftiError> {
    let (h, raw) = decode_raw(&read(path.as_ref())?)?;
    let mut labels = Vec::with_capacity(raw.len());
    for (index, v) in raw.into_iter().enumerate() {
        if !(0.0..=3.0).contains(&v) || v.fract() != 0.0 {
            let label = if (0.0..=255.0).contains(&v) { v as u8 } else { u8::MAX };
            return Err(VolumeError::BadLabel { label, index }.into());
        }
        labels.push(v as u8);
    }
    Ok(LabelVolume::new(h.dims, labels)?)
}

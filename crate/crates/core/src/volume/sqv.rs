//! SQV: a minimal raw volume container.
//!
//! Layout: `b"SQV1"`, then little-endian `u32` nx, ny, nz and dtype code
//! (0 = f32, 1 = u8), then the voxel payload in C order, little-endian.

use super::{Dims, LabelVolume, Volume3D, VolumeError};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"SQV1";
const HEADER_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum SqvError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad SQV magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown SQV dtype code {0}")]
    UnknownDtype(u32),
    #[error("expected {expected} dtype, file holds {found}")]
    WrongDtype { expected: &'static str, found: &'static str },
    #[error("truncated SQV data: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Decoded SQV contents.
#[derive(Debug, Clone, PartialEq)]
pub enum SqvPayload {
    F32(Volume3D),
    U8(LabelVolume),
}

fn header(dims: Dims, dtype: u32) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    for (i, v) in [dims.0 as u32, dims.1 as u32, dims.2 as u32, dtype].into_iter().enumerate() {
        h[4 + 4 * i..8 + 4 * i].copy_from_slice(&v.to_le_bytes());
    }
    h
}

pub fn write_sqv(payload: &SqvPayload, mut out: impl Write) -> std::io::Result<()> {
    match payload {
        SqvPayload::F32(v) => {
            out.write_all(&header(v.dims(), 0))?;
            let mut bytes = Vec::with_capacity(v.len() * 4);
            for x in v.data() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            out.write_all(&bytes)
        }
        SqvPayload::U8(l) => {
            out.write_all(&header(l.dims(), 1))?;
            out.write_all(l.labels())
        }
    }
}

pub fn read_sqv(bytes: &[u8]) -> Result<SqvPayload, SqvError> {
    if bytes.len() < HEADER_LEN {
        return Err(SqvError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(SqvError::BadMagic(magic));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let dims = (word(0) as usize, word(1) as usize, word(2) as usize);
    let n = dims.0 * dims.1 * dims.2;
    let body = &bytes[HEADER_LEN..];
    match word(3) {
        0 => {
            if body.len() < n * 4 {
                return Err(SqvError::Truncated { expected: HEADER_LEN + n * 4, actual: bytes.len() });
            }
            let data =
                body[..n * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Ok(SqvPayload::F32(Volume3D::new(dims, data)?))
        }
        1 => {
            if body.len() < n {
                return Err(SqvError::Truncated { expected: HEADER_LEN + n, actual: bytes.len() });
            }
            Ok(SqvPayload::U8(LabelVolume::new(dims, body[..n].to_vec())?))
        }
        code => Err(SqvError::UnknownDtype(code)),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SqvError + '_ {
    move |source| SqvError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, payload: &SqvPayload) -> Result<(), SqvError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    write_sqv(payload, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<SqvPayload, SqvError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    read_sqv(&bytes)
}

pub fn save_sqv(path: impl AsRef<Path>, vol: &Volume3D) -> Result<(), SqvError> {
    write_file(path.as_ref(), &SqvPayload::F32(vol.clone()))
}

pub fn save_sqv_labels(path: impl AsRef<Path>, labels: &LabelVolume) -> Result<(), SqvError> {
    write_file(path.as_ref(), &SqvPayload::U8(labels.clone()))
}

pub fn load_sqv(path: impl AsRef<Path>) -> Result<Volume3D, SqvError> {
    match read_file(path.as_ref())? {
        SqvPayload::F32(v) => Ok(v),
        SqvPayload::U8(_) => Err(SqvError::WrongDtype { expected: "f32", found: "u8" }),
    }
}

pub fn load_sqv_labels(path: impl AsRef<Path>) -> Result<LabelVolume, SqvError> {
    match read_file(path.as_ref())? {
        SqvPayload::U8(l) => Ok(l),
        SqvPayload::F32(_) => Err(SqvError::WrongDtype { expected: "u8", found: "f32" }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let v = Volume3D::filled((2, 3, 4), 1.5);
        let mut bytes = Vec::new();
        write_sqv(&SqvPayload::F32(v), &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"SQV1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 24 * 4);
        assert_eq!(&bytes[20..24], &1.5f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read_sqv(b"NOPE0000000000000000"), Err(SqvError::BadMagic(_))));
        let mut bytes = Vec::new();
        write_sqv(&SqvPayload::F32(Volume3D::zeros((2, 2, 2))), &mut bytes).unwrap();
        bytes.truncate(30);
        assert!(matches!(read_sqv(&bytes), Err(SqvError::Truncated { .. })));
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.sqv");
        save_sqv_labels(&p, &LabelVolume::background((2, 2, 2))).unwrap();
        assert!(matches!(load_sqv(&p), Err(SqvError::WrongDtype { .. })));
        assert_eq!(load_sqv_labels(&p).unwrap().dims(), (2, 2, 2));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_sqv("/nonexistent/x.sqv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.sqv"));
    }

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_exact(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in any::<u32>()) {
            // arbitrary finite bit patterns, including subnormals and negative zero
            let mut state = seed as u64 | 1;
            let data: Vec<f32> = (0..nx * ny * nz).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = f32::from_bits((state >> 32) as u32);
                if v.is_finite() { v } else { -0.0 }
            }).collect();
            let vol = Volume3D::new((nx, ny, nz), data).unwrap();
            let mut bytes = Vec::new();
            write_sqv(&SqvPayload::F32(vol.clone()), &mut bytes).unwrap();
            let SqvPayload::F32(back) = read_sqv(&bytes).unwrap() else { panic!("dtype") };
            prop_assert_eq!(back.dims(), vol.dims());
            for (a, b) in back.data().iter().zip(vol.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

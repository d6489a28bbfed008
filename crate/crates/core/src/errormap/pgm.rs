use crate::volume::{Slice2D, ViewAxis, Volume3D, VolumeError};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Binary 8-bit PGM (`P5`). Values are scaled by 255, rounded and clamped;
/// the first row of the slice is written first.
pub fn write_pgm(slice: &Slice2D, mut out: impl Write) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", slice.w, slice.h)?;
    let bytes: Vec<u8> = slice.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    out.write_all(&bytes)
}

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Writes the given slices of `vol` along `view` as
/// `{prefix}_{view}_{index:03}.pgm` and returns the paths.
pub fn export_slices(
    vol: &Volume3D,
    view: ViewAxis,
    indices: &[usize],
    dir: impl AsRef<Path>,
    prefix: &str,
) -> Result<Vec<PathBuf>, PgmError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| PgmError::Io { path: dir.into(), source })?;
    indices
        .iter()
        .map(|&i| {
            let slice = vol.extract_slice(view, i)?;
            let path = dir.join(format!("{prefix}_{view}_{i:03}.pgm"));
            let io = |source| PgmError::Io { path: path.clone(), source };
            let file = std::fs::File::create(&path).map_err(io)?;
            let mut w = std::io::BufWriter::new(file);
            write_pgm(&slice, &mut w).and_then(|_| w.flush()).map_err(io)?;
            Ok(path)
        })
        .collect()
}

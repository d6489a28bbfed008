//! Error maps: per-view differences between acquired and reconstructed
//! slices, averaged over the three views, then thresholded and smoothed.

mod pgm;

pub use pgm::{export_slices, write_pgm, PgmError};

use crate::recon::{OneHotSlice, ReconError, Reconstructor};
use crate::volume::{
    gaussian_smooth, load_sqv, normalize_slice, save_sqv, Dims, LabelVolume, Slice2D, SqvError, ViewAxis, Volume3D,
    VolumeError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ErrorMapError {
    #[error("MRI dims {mri:?} differ from segmentation dims {seg:?}")]
    DimMismatch { mri: Dims, seg: Dims },
    #[error("slice dims {a:?} and {b:?} differ")]
    SliceMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("reconstructing {view} slice {index}: {source}")]
    Recon {
        view: ViewAxis,
        index: usize,
        #[source]
        source: ReconError,
    },
    #[error("reconstructor returned a {actual:?} slice for {view} slice {index}, expected {expected:?}")]
    ReconShape { view: ViewAxis, index: usize, expected: (usize, usize), actual: (usize, usize) },
    #[error("invalid postprocess config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Sqv(#[from] SqvError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed provenance: {source}")]
    Provenance {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Values strictly below this are zeroed before smoothing.
    pub threshold: f32,
    /// Gaussian sigma in voxels; 0 disables smoothing.
    pub sigma: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig { threshold: 0.15, sigma: 1.0 }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), ErrorMapError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ErrorMapError::InvalidConfig(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ErrorMapError::InvalidConfig(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub reconstructor: String,
    pub dims: [usize; 3],
    pub postprocess: Option<PostprocessConfig>,
}

/// 3D error map with values in [0, 1] on the MRI grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub map: Volume3D,
    pub provenance: Provenance,
}

impl ErrorMap {
    /// Sidecar path: `<stem>.json` next to the map.
    pub fn sidecar(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ErrorMapError> {
        let path = path.as_ref();
        save_sqv(path, &self.map)?;
        let side = Self::sidecar(path);
        let json = serde_json::to_vec_pretty(&self.provenance).expect("provenance serializes");
        std::fs::write(&side, json).map_err(|source| ErrorMapError::Io { path: side, source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ErrorMapError> {
        let path = path.as_ref();
        let map = load_sqv(path)?;
        let side = Self::sidecar(path);
        let bytes = std::fs::read(&side).map_err(|source| ErrorMapError::Io { path: side.clone(), source })?;
        let provenance =
            serde_json::from_slice(&bytes).map_err(|source| ErrorMapError::Provenance { path: side, source })?;
        Ok(ErrorMap { map, provenance })
    }
}

/// `|normalize(orig) - normalize(gen)|` per pixel.
pub fn slice_difference(orig: &Slice2D, gen: &Slice2D) -> Result<Slice2D, ErrorMapError> {
    if orig.dims() != gen.dims() {
        return Err(ErrorMapError::SliceMismatch { a: orig.dims(), b: gen.dims() });
    }
    let (a, b) = (normalize_slice(orig), normalize_slice(gen));
    let data = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).collect();
    Ok(Slice2D::new(orig.w, orig.h, data))
}

/// Difference volume of one view: every slice along `view` is reconstructed
/// from its labels and compared with the MRI slice.
pub fn view_difference(
    mri: &Volume3D,
    seg: &LabelVolume,
    recon: &dyn Reconstructor,
    view: ViewAxis,
) -> Result<Volume3D, ErrorMapError> {
    if mri.dims() != seg.dims() {
        return Err(ErrorMapError::DimMismatch { mri: mri.dims(), seg: seg.dims() });
    }
    let slices = (0..view.extent(mri.dims()))
        .into_par_iter()
        .map(|index| {
            let wrap = |source| ErrorMapError::Recon { view, index, source };
            let labels = OneHotSlice::from_labels(&seg.extract_slice(view, index)?).map_err(wrap)?;
            let gen = recon.reconstruct(view, &labels).map_err(wrap)?;
            let orig = mri.extract_slice(view, index)?;
            if gen.dims() != orig.dims() {
                return Err(ErrorMapError::ReconShape { view, index, expected: orig.dims(), actual: gen.dims() });
            }
            slice_difference(&orig, &gen)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Volume3D::zeros(mri.dims());
    for (index, s) in slices.iter().enumerate() {
        out.insert_slice(view, index, s)?;
    }
    Ok(out)
}

/// Mean of the axial, coronal and sagittal difference volumes.
pub fn build_error_map(
    mri: &Volume3D,
    seg: &LabelVolume,
    recon: &dyn Reconstructor,
) -> Result<ErrorMap, ErrorMapError> {
    let views = ViewAxis::ALL.map(|v| view_difference(mri, seg, recon, v));
    let [a, c, s] = views;
    let (a, c, s) = (a?, c?, s?);
    let data = a.data().iter().zip(c.data()).zip(s.data()).map(|((x, y), z)| (x + y + z) / 3.0).collect();
    let dims = mri.dims();
    Ok(ErrorMap {
        map: Volume3D::new(dims, data)?.with_spacing(mri.spacing),
        provenance: Provenance { reconstructor: recon.id(), dims: [dims.0, dims.1, dims.2], postprocess: None },
    })
}

/// Zeroes values below the threshold, then smooths.
pub fn postprocess(map: &ErrorMap, cfg: &PostprocessConfig) -> Result<ErrorMap, ErrorMapError> {
    cfg.validate()?;
    let thresholded = map.map.map(|v| if v < cfg.threshold { 0.0 } else { v });
    let smoothed = gaussian_smooth(&thresholded, cfg.sigma);
    Ok(ErrorMap { map: smoothed, provenance: Provenance { postprocess: Some(*cfg), ..map.provenance.clone() } })
}

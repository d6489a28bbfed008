//! Volumetric data model: scalar and label volumes, three-view slicing,
//! robust intensity normalization, half-resolution pooling and smoothing.
//!
//! Voxels are stored in C order with x varying fastest, so the linear index
//! of `(x, y, z)` is `x + nx * (y + ny * z)`.

mod nifti;
mod smooth;
mod sqv;

pub use nifti::{load_nifti, load_nifti_labels, parse_nifti, NiftiError};
pub use smooth::{gaussian_kernel, gaussian_smooth};
pub use sqv::{load_sqv, load_sqv_labels, read_sqv, save_sqv, save_sqv_labels, write_sqv, SqvError, SqvPayload};

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum VolumeError {
    #[error("slice index {index} out of range for {axis} axis with extent {extent}")]
    SliceOutOfRange { axis: ViewAxis, index: usize, extent: usize },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch { expected: (usize, usize, usize), actual: (usize, usize, usize) },
    #[error("data length {len} does not match dims {dims:?}")]
    BadLength { dims: (usize, usize, usize), len: usize },
    #[error("all dims must be positive, got {0:?}")]
    ZeroDim((usize, usize, usize)),
    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),
    #[error("invalid tissue label {label} at voxel {index}")]
    BadLabel { label: u8, index: usize },
    #[error("slice is {actual:?}, plane along {axis} needs {expected:?}")]
    SliceShape { axis: ViewAxis, expected: (usize, usize), actual: (usize, usize) },
}

pub type Dims = (usize, usize, usize);

fn check_dims(dims: Dims, len: usize) -> Result<(), VolumeError> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(VolumeError::ZeroDim(dims));
    }
    if dims.0 * dims.1 * dims.2 != len {
        return Err(VolumeError::BadLength { dims, len });
    }
    Ok(())
}

/// Tissue class codes carried by a [`LabelVolume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tissue {
    Background = 0,
    Gm = 1,
    Wm = 2,
    Csf = 3,
}

impl Tissue {
    pub const ALL: [Tissue; 4] = [Tissue::Background, Tissue::Gm, Tissue::Wm, Tissue::Csf];

    pub fn from_code(code: u8) -> Option<Tissue> {
        match code {
            0 => Some(Tissue::Background),
            1 => Some(Tissue::Gm),
            2 => Some(Tissue::Wm),
            3 => Some(Tissue::Csf),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Anatomical slicing direction.
///
/// Axial planes are x–y (indexed along z), coronal planes x–z (along y) and
/// sagittal planes y–z (along x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewAxis {
    Axial,
    Coronal,
    Sagittal,
}

impl ViewAxis {
    pub const ALL: [ViewAxis; 3] = [ViewAxis::Axial, ViewAxis::Coronal, ViewAxis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            ViewAxis::Axial => "axial",
            ViewAxis::Coronal => "coronal",
            ViewAxis::Sagittal => "sagittal",
        }
    }

    /// Number of slices along this axis.
    pub fn extent(self, dims: Dims) -> usize {
        match self {
            ViewAxis::Axial => dims.2,
            ViewAxis::Coronal => dims.1,
            ViewAxis::Sagittal => dims.0,
        }
    }

    /// In-plane `(width, height)` of a slice.
    pub fn plane_dims(self, dims: Dims) -> (usize, usize) {
        match self {
            ViewAxis::Axial => (dims.0, dims.1),
            ViewAxis::Coronal => (dims.0, dims.2),
            ViewAxis::Sagittal => (dims.1, dims.2),
        }
    }

    /// Volume linear index of in-plane pixel `(u, v)` on slice `index`.
    #[inline]
    fn voxel(self, dims: Dims, index: usize, u: usize, v: usize) -> usize {
        let (x, y, z) = match self {
            ViewAxis::Axial => (u, v, index),
            ViewAxis::Coronal => (u, index, v),
            ViewAxis::Sagittal => (index, u, v),
        };
        x + dims.0 * (y + dims.1 * z)
    }
}

impl fmt::Display for ViewAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ViewAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(ViewAxis::Axial),
            "coronal" => Ok(ViewAxis::Coronal),
            "sagittal" => Ok(ViewAxis::Sagittal),
            other => Err(format!("unknown view axis `{other}`")),
        }
    }
}

/// A 2D plane of scalars, row-major with `w` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Slice2D {
    pub fn new(w: usize, h: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), w * h, "slice data length must be w*h");
        Slice2D { w, h, data }
    }

    pub fn filled(w: usize, h: usize, value: f32) -> Self {
        Slice2D { w, h, data: vec![value; w * h] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.w, self.h)
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[u + self.w * v]
    }
}

/// Scalar 3D intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    data: Vec<f32>,
    /// Voxel size in mm, informational only.
    pub spacing: [f32; 3],
}

impl Volume3D {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self, VolumeError> {
        check_dims(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Volume3D { dims, data, spacing: [1.0; 3] })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        assert!(dims.0 > 0 && dims.1 > 0 && dims.2 > 0, "dims must be positive");
        Volume3D { dims, data: vec![value; dims.0 * dims.1 * dims.2], spacing: [1.0; 3] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3D { dims, data, spacing: [1.0; 3] }
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume3D {
        Volume3D { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect(), spacing: self.spacing }
    }

    pub fn extract_slice(&self, axis: ViewAxis, index: usize) -> Result<Slice2D, VolumeError> {
        extract_plane(self.dims, &self.data, axis, index, |v| v)
    }

    /// Writes `slice` into the plane at `index` along `axis`.
    pub fn insert_slice(&mut self, axis: ViewAxis, index: usize, slice: &Slice2D) -> Result<(), VolumeError> {
        let extent = axis.extent(self.dims);
        if index >= extent {
            return Err(VolumeError::SliceOutOfRange { axis, index, extent });
        }
        let (w, h) = axis.plane_dims(self.dims);
        if slice.dims() != (w, h) {
            return Err(VolumeError::SliceShape { axis, expected: (w, h), actual: slice.dims() });
        }
        for v in 0..h {
            for u in 0..w {
                let i = axis.voxel(self.dims, index, u, v);
                self.data[i] = slice.data[u + w * v];
            }
        }
        Ok(())
    }
}

/// 3D tissue-label grid with codes from [`Tissue`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims, labels: Vec<u8>) -> Result<Self, VolumeError> {
        check_dims(dims, labels.len())?;
        if let Some(index) = labels.iter().position(|&l| Tissue::from_code(l).is_none()) {
            return Err(VolumeError::BadLabel { label: labels[index], index });
        }
        Ok(LabelVolume { dims, labels })
    }

    pub fn background(dims: Dims) -> Self {
        assert!(dims.0 > 0 && dims.1 > 0 && dims.2 > 0, "dims must be positive");
        LabelVolume { dims, labels: vec![0; dims.0 * dims.1 * dims.2] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Tissue {
        Tissue::from_code(self.labels[self.index(x, y, z)]).expect("labels validated")
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, tissue: Tissue) {
        let i = self.index(x, y, z);
        self.labels[i] = tissue.code();
    }

    pub fn tissue_at(&self, i: usize) -> Tissue {
        Tissue::from_code(self.labels[i]).expect("labels validated")
    }

    pub fn set_at(&mut self, i: usize, tissue: Tissue) {
        self.labels[i] = tissue.code();
    }

    pub fn count(&self, tissue: Tissue) -> usize {
        self.labels.iter().filter(|&&l| l == tissue.code()).count()
    }

    /// Label codes as a plane of scalars.
    pub fn extract_slice(&self, axis: ViewAxis, index: usize) -> Result<Slice2D, VolumeError> {
        extract_plane(self.dims, &self.labels, axis, index, |l| l as f32)
    }
}

fn extract_plane<T: Copy>(
    dims: Dims,
    data: &[T],
    axis: ViewAxis,
    index: usize,
    to_f32: impl Fn(T) -> f32,
) -> Result<Slice2D, VolumeError> {
    let extent = axis.extent(dims);
    if index >= extent {
        return Err(VolumeError::SliceOutOfRange { axis, index, extent });
    }
    let (w, h) = axis.plane_dims(dims);
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            out.push(to_f32(data[axis.voxel(dims, index, u, v)]));
        }
    }
    Ok(Slice2D { w, h, data: out })
}

/// Linear-interpolation percentile of already sorted values, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Robust min-max scaling to [0, 1] using the 1st and 99th percentiles.
///
/// Values are clamped to `[p1, p99]` before scaling; a slice whose
/// percentiles coincide maps to all zeros.
pub fn normalize_slice(s: &Slice2D) -> Slice2D {
    assert!(!s.data.is_empty(), "cannot normalize an empty slice");
    let mut sorted: Vec<f64> = s.data.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let p1 = percentile_sorted(&sorted, 0.01);
    let p99 = percentile_sorted(&sorted, 0.99);
    let range = p99 - p1;
    let data = if range <= 0.0 {
        vec![0.0; s.data.len()]
    } else {
        s.data.iter().map(|&v| ((v as f64).clamp(p1, p99) - p1) / range).map(|v| v as f32).collect()
    };
    Slice2D { w: s.w, h: s.h, data }
}

/// Which axes were padded by replicating the last plane before pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DownsampleInfo {
    pub padded: [bool; 3],
}

/// 2×2×2 mean pooling. Odd extents are padded by replicating the last plane,
/// so the output dims are `ceil(dims / 2)`.
pub fn downsample_half(vol: &Volume3D) -> (Volume3D, DownsampleInfo) {
    let (nx, ny, nz) = vol.dims;
    let out_dims = (nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2));
    let info = DownsampleInfo { padded: [nx % 2 == 1, ny % 2 == 1, nz % 2 == 1] };
    let clampi = |i: usize, n: usize| i.min(n - 1);
    let mut data = Vec::with_capacity(out_dims.0 * out_dims.1 * out_dims.2);
    for oz in 0..out_dims.2 {
        for oy in 0..out_dims.1 {
            for ox in 0..out_dims.0 {
                let mut acc = 0.0f64;
                for dz in 0..2 {
                    let z = clampi(2 * oz + dz, nz);
                    for dy in 0..2 {
                        let y = clampi(2 * oy + dy, ny);
                        for dx in 0..2 {
                            let x = clampi(2 * ox + dx, nx);
                            acc += vol.get(x, y, z) as f64;
                        }
                    }
                }
                data.push((acc / 8.0) as f32);
            }
        }
    }
    let spacing = [vol.spacing[0] * 2.0, vol.spacing[1] * 2.0, vol.spacing[2] * 2.0];
    (Volume3D { dims: out_dims, data, spacing }, info)
}

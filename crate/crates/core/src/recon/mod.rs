//! Slice reconstructors: segmentation slice in, predicted MRI slice out.

mod pix2pix;

pub use pix2pix::{
    build_discriminator, build_generator, mean_l1, train_pix2pix, train_pix2pix_views, training_pairs, LossRecord,
    Pix2PixModel, Pix2PixSet, ReconTrainConfig,
};

use crate::nn::NnError;
use crate::phantom::{sub_seed, Intensities};
use crate::volume::{Dims, Slice2D, Tissue, ViewAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ReconError {
    #[error("invalid one-hot encoding at pixel {pixel}: {reason}")]
    Encoding { pixel: usize, reason: String },
    #[error("slice dims {actual:?} differ from {expected:?}")]
    DimMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("no training data: {0}")]
    Empty(String),
    #[error("slice fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("no model for the {0} view")]
    MissingView(ViewAxis),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One-hot label slice: channel-major `[GM, WM, CSF]` planes of `w * h`
/// pixels; background pixels are zero in all three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotSlice {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

const CHANNELS: [Tissue; 3] = [Tissue::Gm, Tissue::Wm, Tissue::Csf];

impl OneHotSlice {
    pub fn new(w: usize, h: usize, data: Vec<f32>) -> Result<Self, ReconError> {
        let plane = w * h;
        if data.len() != 3 * plane {
            return Err(ReconError::Encoding {
                pixel: 0,
                reason: format!("expected {} values for {w}x{h}x3, got {}", 3 * plane, data.len()),
            });
        }
        for p in 0..plane {
            let mut set = 0;
            for c in 0..3 {
                match data[c * plane + p] {
                    0.0 => {}
                    1.0 => set += 1,
                    v => return Err(ReconError::Encoding { pixel: p, reason: format!("value {v} is not 0 or 1") }),
                }
            }
            if set > 1 {
                return Err(ReconError::Encoding { pixel: p, reason: format!("{set} channels set") });
            }
        }
        Ok(OneHotSlice { w, h, data })
    }

    /// Encodes a slice of label codes.
    pub fn from_labels(s: &Slice2D) -> Result<Self, ReconError> {
        let plane = s.w * s.h;
        let mut data = vec![0.0; 3 * plane];
        for (p, &v) in s.data.iter().enumerate() {
            let tissue =
                (v.fract() == 0.0 && (0.0..=3.0).contains(&v))
                    .then(|| Tissue::from_code(v as u8))
                    .flatten()
                    .ok_or_else(|| ReconError::Encoding { pixel: p, reason: format!("{v} is not a label code") })?;
            if let Some(c) = CHANNELS.iter().position(|&t| t == tissue) {
                data[c * plane + p] = 1.0;
            }
        }
        Ok(OneHotSlice { w: s.w, h: s.h, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.w, self.h)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn tissue_at(&self, p: usize) -> Tissue {
        let plane = self.w * self.h;
        (0..3).find(|&c| self.data[c * plane + p] == 1.0).map_or(Tissue::Background, |c| CHANNELS[c])
    }
}

/// Anything that can turn a label slice of a given view into an intensity
/// slice on [0, 1] of the same size.
pub trait Reconstructor: Sync {
    fn id(&self) -> String;
    fn reconstruct(&self, view: ViewAxis, labels: &OneHotSlice) -> Result<Slice2D, ReconError>;
}

/// Paints every pixel with its class mean intensity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleRecon {
    pub intensities: Intensities,
}

impl OracleRecon {
    pub fn new(intensities: Intensities) -> Self {
        OracleRecon { intensities }
    }
}

impl Reconstructor for OracleRecon {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn reconstruct(&self, _view: ViewAxis, labels: &OneHotSlice) -> Result<Slice2D, ReconError> {
        let (w, h) = labels.dims();
        let data = (0..w * h).map(|p| self.intensities.of(labels.tissue_at(p))).collect();
        Ok(Slice2D::new(w, h, data))
    }
}

/// One selected training slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceRef {
    pub subject: usize,
    pub view: ViewAxis,
    pub index: usize,
}

/// Per subject and view, `round(fraction * extent)` distinct slice indices
/// drawn uniformly (returned sorted).
pub fn sample_training_slices(subjects: &[Dims], fraction: f64, seed: u64) -> Result<Vec<SliceRef>, ReconError> {
    if subjects.is_empty() {
        return Err(ReconError::Empty("no subjects to sample slices from".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ReconError::BadFraction(fraction));
    }
    let mut out = Vec::new();
    for (subject, &dims) in subjects.iter().enumerate() {
        for (v, view) in ViewAxis::ALL.into_iter().enumerate() {
            let extent = view.extent(dims);
            let count = ((fraction * extent as f64).round() as usize).min(extent);
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, (subject * 3 + v) as u64));
            let mut picked = rand::seq::index::sample(&mut rng, extent, count).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|index| SliceRef { subject, view, index }));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_slice(codes: &[u8], w: usize, h: usize) -> Slice2D {
        Slice2D::new(w, h, codes.iter().map(|&c| c as f32).collect())
    }

    #[test]
    fn one_hot_channels_follow_gm_wm_csf() {
        let oh = OneHotSlice::from_labels(&label_slice(&[0, 1, 2, 3], 2, 2)).unwrap();
        assert_eq!(oh.data(), &[0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.]);
        assert_eq!(oh.tissue_at(0), Tissue::Background);
        assert_eq!(oh.tissue_at(3), Tissue::Csf);
    }

    #[test]
    fn invalid_encodings_are_rejected() {
        assert!(OneHotSlice::new(1, 1, vec![1.0, 1.0, 0.0]).is_err());
        assert!(OneHotSlice::new(1, 1, vec![0.5, 0.0, 0.0]).is_err());
        assert!(OneHotSlice::new(1, 2, vec![0.0; 3]).is_err());
        assert!(OneHotSlice::from_labels(&Slice2D::new(1, 1, vec![4.0])).is_err());
        assert!(OneHotSlice::from_labels(&Slice2D::new(1, 1, vec![1.5])).is_err());
    }

    #[test]
    fn oracle_paints_class_means() {
        let oracle = OracleRecon::default();
        let wm = OneHotSlice::from_labels(&label_slice(&[2; 6], 3, 2)).unwrap();
        let out = oracle.reconstruct(ViewAxis::Axial, &wm).unwrap();
        assert_eq!(out.dims(), (3, 2));
        assert!(out.data.iter().all(|&v| v == 0.85));
        let bg = OneHotSlice::from_labels(&label_slice(&[0; 4], 2, 2)).unwrap();
        let out = oracle.reconstruct(ViewAxis::Coronal, &bg).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.05));
    }

    #[test]
    fn slice_sampling_counts_and_determinism() {
        let all = sample_training_slices(&[(4, 5, 6)], 1.0, 0).unwrap();
        assert_eq!(all.len(), 15);
        let refs = sample_training_slices(&[(64, 64, 64), (64, 64, 64)], 0.10, 3).unwrap();
        for s in 0..2 {
            for v in ViewAxis::ALL {
                assert_eq!(refs.iter().filter(|r| r.subject == s && r.view == v).count(), 6);
            }
        }
        assert_eq!(refs, sample_training_slices(&[(64, 64, 64), (64, 64, 64)], 0.10, 3).unwrap());
        assert_ne!(refs, sample_training_slices(&[(64, 64, 64), (64, 64, 64)], 0.10, 4).unwrap());
        assert!(sample_training_slices(&[], 0.1, 0).is_err());
        assert!(sample_training_slices(&[(4, 4, 4)], 0.0, 0).is_err());
    }
}

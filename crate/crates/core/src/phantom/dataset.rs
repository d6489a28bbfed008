use super::{generate_anatomy, inject_errors, jittered, sub_seed, ErrorInjection, PhantomError, PhantomSpec};
use crate::volume::{load_sqv, load_sqv_labels, save_sqv, save_sqv_labels, LabelVolume, Volume3D};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One generated subject. `label` is 0 for good and 1 for bad.
#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub id: String,
    pub mri: Volume3D,
    pub seg_good: LabelVolume,
    pub seg_bad: LabelVolume,
    pub error_mask: Volume3D,
    pub label: u8,
    pub seed: u64,
}

impl PhantomSample {
    /// Sample `index` of a dataset drawn under `master`; bad samples carry
    /// injected errors, good ones an untouched copy of the segmentation.
    pub fn generate(
        spec: &PhantomSpec,
        inj: &ErrorInjection,
        master: u64,
        index: usize,
        bad: bool,
    ) -> Result<Self, PhantomError> {
        let seed = sub_seed(master, index as u64);
        let (seg_good, mri) = generate_anatomy(&jittered(spec, seed))?;
        let (seg_bad, error_mask) = if bad {
            inject_errors(&seg_good, inj, sub_seed(seed, 1))?
        } else {
            (seg_good.clone(), Volume3D::zeros(seg_good.dims()))
        };
        Ok(PhantomSample { id: format!("s{index:04}"), mri, seg_good, seg_bad, error_mask, label: bad as u8, seed })
    }

    /// The segmentation handed to quality control.
    pub fn seg(&self) -> &LabelVolume {
        &self.seg_bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub mri_path: PathBuf,
    pub seg_good_path: PathBuf,
    pub seg_bad_path: PathBuf,
    pub mask_path: PathBuf,
    pub label: u8,
    pub seed: u64,
}

/// Dataset index. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: PhantomSpec,
    pub injection: ErrorInjection,
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhantomError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| PhantomError::Io { path: path.into(), source })?;
        let mut m: Manifest =
            serde_json::from_slice(&bytes).map_err(|source| PhantomError::Manifest { path: path.into(), source })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_sample(&self, e: &ManifestEntry) -> Result<PhantomSample, PhantomError> {
        Ok(PhantomSample {
            id: e.id.clone(),
            mri: load_sqv(self.resolve(&e.mri_path))?,
            seg_good: load_sqv_labels(self.resolve(&e.seg_good_path))?,
            seg_bad: load_sqv_labels(self.resolve(&e.seg_bad_path))?,
            error_mask: load_sqv(self.resolve(&e.mask_path))?,
            label: e.label,
            seed: e.seed,
        })
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Generates `n_good` then `n_bad` phantoms into `out_dir` and writes the
/// manifest there.
pub fn make_dataset(
    n_good: usize,
    n_bad: usize,
    spec: &PhantomSpec,
    inj: &ErrorInjection,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, PhantomError> {
    let out_dir = out_dir.as_ref();
    spec.validate()?;
    inj.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| PhantomError::Io { path: out_dir.into(), source })?;
    let samples = (0..n_good + n_bad)
        .into_par_iter()
        .map(|i| {
            let s = PhantomSample::generate(spec, inj, seed, i, i >= n_good)?;
            let name = |part: &str| PathBuf::from(format!("{}_{part}.sqv", s.id));
            let entry = ManifestEntry {
                id: s.id.clone(),
                mri_path: name("mri"),
                seg_good_path: name("seg_good"),
                seg_bad_path: name("seg_bad"),
                mask_path: name("mask"),
                label: s.label,
                seed: s.seed,
            };
            save_sqv(out_dir.join(&entry.mri_path), &s.mri)?;
            save_sqv_labels(out_dir.join(&entry.seg_good_path), &s.seg_good)?;
            save_sqv_labels(out_dir.join(&entry.seg_bad_path), &s.seg_bad)?;
            save_sqv(out_dir.join(&entry.mask_path), &s.error_mask)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>, PhantomError>>()?;
    let manifest = Manifest { spec: spec.clone(), injection: inj.clone(), seed, samples, root: out_dir.into() };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|source| PhantomError::Io { path, source })?;
    Ok(manifest)
}

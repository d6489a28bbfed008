//! Synthetic brain phantoms with controlled segmentation errors.
//!
//! Anatomy is three nested ellipsoids (WM core, GM ribbon, CSF shell)
//! centred in the volume. The MRI is rendered as the class mean times a
//! linear bias ramp plus Gaussian noise.

mod dataset;
mod inject;

pub use dataset::{make_dataset, Manifest, ManifestEntry, PhantomSample, MANIFEST_FILE};
pub use inject::{inject_errors, ErrorInjection, ErrorKind};

use crate::volume::{Dims, LabelVolume, Tissue, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("invalid error injection: {0}")]
    InvalidInjection(String),
    #[error(
        "severity {requested} unreachable with {blobs} blob(s) of radius {rmin}..{rmax}: \
         achieved altered fraction {achieved:.5}"
    )]
    Unreachable { requested: f64, achieved: f64, blobs: usize, rmin: f64, rmax: f64 },
    #[error(transparent)]
    Sqv(#[from] crate::volume::SqvError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Ellipsoid semi-axes in voxels, `[rx, ry, rz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Radii {
    pub csf: [f64; 3],
    pub gm: [f64; 3],
    pub wm: [f64; 3],
}

impl Default for Radii {
    fn default() -> Self {
        Radii { csf: [26.0, 28.0, 24.0], gm: [23.0, 25.0, 21.0], wm: [15.0, 17.0, 13.0] }
    }
}

/// Mean intensity of each tissue class on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensities {
    pub background: f32,
    pub csf: f32,
    pub gm: f32,
    pub wm: f32,
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities { background: 0.05, csf: 0.25, gm: 0.55, wm: 0.85 }
    }
}

impl Intensities {
    pub fn of(&self, tissue: Tissue) -> f32 {
        match tissue {
            Tissue::Background => self.background,
            Tissue::Gm => self.gm,
            Tissue::Wm => self.wm,
            Tissue::Csf => self.csf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub radii: Radii,
    pub intensities: Intensities,
    pub noise_sigma: f64,
    /// Peak relative deviation of the multiplicative bias ramp.
    pub bias_amplitude: f64,
    /// Per-sample radius scaling range used by [`make_dataset`]:
    /// each axis is scaled by a factor in `[1 - j, 1 + j]`.
    pub radius_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 64],
            radii: Radii::default(),
            intensities: Intensities::default(),
            noise_sigma: 0.02,
            bias_amplitude: 0.1,
            radius_jitter: 0.08,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Default anatomy rescaled to a cubic grid of side `n`.
    pub fn cube(n: usize) -> Self {
        let f = n as f64 / 64.0;
        let scale = |r: [f64; 3]| r.map(|v| v * f);
        let d = Radii::default();
        PhantomSpec {
            dims: [n; 3],
            radii: Radii { csf: scale(d.csf), gm: scale(d.gm), wm: scale(d.wm) },
            ..Default::default()
        }
    }

    /// Noise- and bias-free rendering of the same anatomy.
    pub fn clean(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.bias_amplitude = 0.0;
        self
    }

    pub fn dims(&self) -> Dims {
        (self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        if self.dims.contains(&0) {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        let r = &self.radii;
        for a in 0..3 {
            if !(r.wm[a] > 0.0 && r.wm[a] < r.gm[a] && r.gm[a] < r.csf[a]) {
                return bad(format!(
                    "radii must be strictly nested on axis {a}: wm {} < gm {} < csf {}",
                    r.wm[a], r.gm[a], r.csf[a]
                ));
            }
            let half = self.dims[a] as f64 / 2.0;
            if r.csf[a] >= half {
                return bad(format!("csf radius {} on axis {a} does not fit in extent {}", r.csf[a], self.dims[a]));
            }
        }
        let i = self.intensities;
        let vals = [i.background, i.csf, i.gm, i.wm];
        for (k, &a) in vals.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("class intensity {a} outside [0, 1]"));
            }
            if vals[k + 1..].contains(&a) {
                return bad(format!("class intensities must be distinct, {a} repeats"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.bias_amplitude >= 0.0) {
            return bad("noise_sigma and bias_amplitude must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.radius_jitter) {
            return bad(format!("radius_jitter {} outside [0, 1)", self.radius_jitter));
        }
        Ok(())
    }
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for stream `index` under `master`.
pub fn sub_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

fn inside(p: [f64; 3], r: [f64; 3]) -> bool {
    (p[0] / r[0]).powi(2) + (p[1] / r[1]).powi(2) + (p[2] / r[2]).powi(2) <= 1.0
}

/// Nested-ellipsoid labels and the rendered MRI.
pub fn generate_anatomy(spec: &PhantomSpec) -> Result<(LabelVolume, Volume3D), PhantomError> {
    spec.validate()?;
    let dims = spec.dims();
    let c = spec.dims.map(|d| (d as f64 - 1.0) / 2.0);
    let mut labels = LabelVolume::background(dims);
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                let p = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                let t = if inside(p, spec.radii.wm) {
                    Tissue::Wm
                } else if inside(p, spec.radii.gm) {
                    Tissue::Gm
                } else if inside(p, spec.radii.csf) {
                    Tissue::Csf
                } else {
                    continue;
                };
                labels.set(x, y, z, t);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut u: [f64; 3] = [0.0; 3];
    while u.iter().map(|v| v.abs()).sum::<f64>() < 1e-6 {
        u = [(); 3].map(|_| StandardNormal.sample(&mut rng));
    }
    // L1-normalized so the ramp peaks at exactly ±bias_amplitude in the corners
    let l1: f64 = u.iter().map(|v| v.abs()).sum();
    let half = spec.dims.map(|d| ((d as f64 - 1.0) / 2.0).max(0.5));
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let mri = Volume3D::from_fn(dims, |x, y, z| {
        let mean = spec.intensities.of(labels.get(x, y, z)) as f64;
        let v = if spec.bias_amplitude > 0.0 {
            let p = [(x as f64 - c[0]) / half[0], (y as f64 - c[1]) / half[1], (z as f64 - c[2]) / half[2]];
            let ramp = (u[0] * p[0] + u[1] * p[1] + u[2] * p[2]) / l1;
            mean * (1.0 + spec.bias_amplitude * ramp)
        } else {
            mean
        };
        let v = match &noise {
            Some(n) => v + n.sample(&mut rng),
            None => v,
        };
        v.clamp(0.0, 1.0) as f32
    });
    Ok((labels, mri))
}

/// Copy of `spec` with radii scaled per axis by factors drawn from the jitter range.
pub(crate) fn jittered(spec: &PhantomSpec, seed: u64) -> PhantomSpec {
    let mut out = spec.clone();
    out.seed = seed;
    let j = spec.radius_jitter;
    if j > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6A17_7E55));
        let f: [f64; 3] = [(); 3].map(|_| rng.gen_range(1.0 - j..=1.0 + j));
        for r in [&mut out.radii.csf, &mut out.radii.gm, &mut out.radii.wm] {
            for a in 0..3 {
                r[a] *= f[a];
            }
        }
    }
    out
}

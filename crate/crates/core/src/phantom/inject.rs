use super::PhantomError;
use crate::volume::{LabelVolume, Tissue, Volume3D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// GM relabelled as WM around a point on the WM/GM boundary.
    DilateWmIntoGm,
    /// GM and CSF labels exchanged around a point on the GM/CSF boundary.
    SwapGmCsfBlob,
    /// CSF relabelled as background.
    DeleteCsfRegion,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 3] = [ErrorKind::DilateWmIntoGm, ErrorKind::SwapGmCsfBlob, ErrorKind::DeleteCsfRegion];

    fn relabel(self, t: Tissue) -> Option<Tissue> {
        match (self, t) {
            (ErrorKind::DilateWmIntoGm, Tissue::Gm) => Some(Tissue::Wm),
            (ErrorKind::SwapGmCsfBlob, Tissue::Gm) => Some(Tissue::Csf),
            (ErrorKind::SwapGmCsfBlob, Tissue::Csf) => Some(Tissue::Gm),
            (ErrorKind::DeleteCsfRegion, Tissue::Csf) => Some(Tissue::Background),
            _ => None,
        }
    }

    /// Whether voxel `i` may host a blob centre.
    fn is_center(self, seg: &LabelVolume, i: usize) -> bool {
        let (own, other) = match self {
            ErrorKind::DilateWmIntoGm => (Tissue::Wm, Tissue::Gm),
            ErrorKind::SwapGmCsfBlob => (Tissue::Gm, Tissue::Csf),
            ErrorKind::DeleteCsfRegion => return seg.tissue_at(i) == Tissue::Csf,
        };
        seg.tissue_at(i) == own && neighbours(seg, i).any(|j| seg.tissue_at(j) == other)
    }
}

fn neighbours(seg: &LabelVolume, i: usize) -> impl Iterator<Item = usize> + '_ {
    let (nx, ny, nz) = seg.dims();
    let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
    let steps: [(isize, isize, isize); 6] = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
    steps.into_iter().filter_map(move |(dx, dy, dz)| {
        let (a, b, c) = (x as isize + dx, y as isize + dy, z as isize + dz);
        let ok = a >= 0 && b >= 0 && c >= 0 && (a as usize) < nx && (b as usize) < ny && (c as usize) < nz;
        ok.then(|| seg.index(a as usize, b as usize, c as usize))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorInjection {
    pub kind: ErrorKind,
    pub blob_count: usize,
    /// Allowed blob radius `[min, max]` in voxels.
    pub radius_range: [f64; 2],
    /// Target fraction of brain (non-background) voxels to alter.
    pub severity: f64,
}

impl Default for ErrorInjection {
    fn default() -> Self {
        ErrorInjection { kind: ErrorKind::DilateWmIntoGm, blob_count: 1, radius_range: [3.0, 16.0], severity: 0.02 }
    }
}

impl ErrorInjection {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let [rmin, rmax] = self.radius_range;
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(PhantomError::InvalidInjection(format!("severity {} outside [0, 1]", self.severity)));
        }
        if !(rmin >= 0.0 && rmin <= rmax && rmax.is_finite()) {
            return Err(PhantomError::InvalidInjection(format!("bad radius range [{rmin}, {rmax}]")));
        }
        Ok(())
    }
}

/// Relative tolerance on the achieved altered fraction.
const SEVERITY_TOLERANCE: f64 = 0.3;
/// Below this severity the achieved fraction is not checked.
const CHECKED_SEVERITY: f64 = 0.005;

/// Corrupts `seg` with spherical blobs and returns the new labels with a
/// binary mask of the voxels that changed.
///
/// Each blob is centred on a random eligible voxel and grows until the
/// cumulative altered count reaches its share of the target, capped at the
/// maximum radius.
pub fn inject_errors(
    seg: &LabelVolume,
    inj: &ErrorInjection,
    seed: u64,
) -> Result<(LabelVolume, Volume3D), PhantomError> {
    inj.validate()?;
    let dims = seg.dims();
    let mut out = seg.clone();
    if inj.severity == 0.0 || inj.blob_count == 0 {
        return Ok((out, Volume3D::zeros(dims)));
    }
    let brain = seg.len() - seg.count(Tissue::Background);
    let target = inj.severity * brain as f64;
    let [rmin, rmax] = inj.radius_range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut altered = 0usize;
    let (nx, ny, nz) = dims;

    for b in 0..inj.blob_count {
        let centers: Vec<usize> = (0..out.len()).filter(|&i| inj.kind.is_center(&out, i)).collect();
        let Some(&center) = centers.choose(&mut rng) else { break };
        let need = ((target * (b + 1) as f64 / inj.blob_count as f64).round() as usize).saturating_sub(altered);
        let (cx, cy, cz) = (center % nx, (center / nx) % ny, center / (nx * ny));
        let reach = rmax.ceil() as usize;
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for z in cz.saturating_sub(reach)..(cz + reach + 1).min(nz) {
            for y in cy.saturating_sub(reach)..(cy + reach + 1).min(ny) {
                for x in cx.saturating_sub(reach)..(cx + reach + 1).min(nx) {
                    let i = out.index(x, y, z);
                    // voxels already changed by an earlier blob stay as they are
                    if out.labels()[i] != seg.labels()[i] || inj.kind.relabel(out.tissue_at(i)).is_none() {
                        continue;
                    }
                    let d = ((x as f64 - cx as f64).powi(2)
                        + (y as f64 - cy as f64).powi(2)
                        + (z as f64 - cz as f64).powi(2))
                    .sqrt();
                    if d <= rmax {
                        candidates.push((d, i));
                    }
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let radius = match need {
            0 => rmin,
            n => candidates.get(n - 1).map_or(rmax, |c| c.0).clamp(rmin, rmax),
        };
        for &(d, i) in candidates.iter().take_while(|c| c.0 <= radius) {
            debug_assert!(d <= radius);
            let t = inj.kind.relabel(out.tissue_at(i)).expect("filtered");
            out.set_at(i, t);
            altered += 1;
        }
    }

    let mask = Volume3D::new(
        dims,
        out.labels().iter().zip(seg.labels()).map(|(a, b)| if a != b { 1.0 } else { 0.0 }).collect(),
    )
    .expect("dims from source");
    let achieved = altered as f64 / brain.max(1) as f64;
    if inj.severity >= CHECKED_SEVERITY && (achieved - inj.severity).abs() > SEVERITY_TOLERANCE * inj.severity {
        return Err(PhantomError::Unreachable { requested: inj.severity, achieved, blobs: inj.blob_count, rmin, rmax });
    }
    Ok((out, mask))
}

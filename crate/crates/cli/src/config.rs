use crate::CliError;
use segqc::classifier::{QCNetConfig, QcTrainConfig};
use segqc::errormap::PostprocessConfig;
use segqc::phantom::{ErrorInjection, PhantomSpec};
use segqc::recon::ReconTrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// The whole pipeline's parameters. Every section is optional in the file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub phantom: PhantomSection,
    pub recon: ReconSection,
    pub errormap: ErrorMapSection,
    pub classifier: ClassifierSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub n_good: usize,
    pub n_bad: usize,
    pub spec: PhantomSpec,
    pub injection: ErrorInjection,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection { n_good: 100, n_bad: 100, spec: PhantomSpec::default(), injection: ErrorInjection::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    /// Class-mean painter using the phantom intensities.
    #[default]
    Oracle,
    Pix2pix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    pub kind: ReconKind,
    /// Good subjects used for training, taken in manifest order.
    pub n_subjects: usize,
    pub train: ReconTrainConfig,
}

impl Default for ReconSection {
    fn default() -> Self {
        ReconSection { kind: ReconKind::Oracle, n_subjects: 30, train: ReconTrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorMapSection {
    /// Skip thresholding and smoothing.
    pub raw: bool,
    pub postprocess: PostprocessConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub network: QCNetConfig,
    pub train: QcTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    /// Thresholds reported in the summary sweep.
    pub grid: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { k: 10, grid: (0..=20).map(|i| i as f64 / 20.0).collect() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })
    }

    /// Applies the seed override and checks every section.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        let bad =
            |field: &str, e: &dyn std::fmt::Display| CliError::Invalid { field: field.into(), message: e.to_string() };
        self.phantom.spec.validate().map_err(|e| bad("phantom.spec", &e))?;
        self.phantom.injection.validate().map_err(|e| bad("phantom.injection", &e))?;
        self.recon.train.validate().map_err(|e| bad("recon.train", &e))?;
        self.errormap.postprocess.validate().map_err(|e| bad("errormap.postprocess", &e))?;
        self.classifier.network.validate().map_err(|e| bad("classifier.network", &e))?;
        if self.eval.k < 2 {
            return Err(bad("eval.k", &format!("{} must be at least 2", self.eval.k)));
        }
        if self.eval.grid.is_empty() {
            return Err(bad("eval.grid", &"empty threshold grid"));
        }
        Ok(self)
    }

    /// Sub-seeds per stage so stages stay independent of one another.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        segqc::phantom::sub_seed(self.seed, stage as u64)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Phantom = 1,
    Recon = 2,
    Classifier = 3,
    Eval = 4,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.classifier.network.units, vec![32, 32, 64, 64, 128, 128]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [r#"{"sed": 1}"#, r#"{"phantom": {"n_good": 1, "colour": 2}}"#, r#"{"eval": {"folds": 3}}"#] {
            let err = serde_json::from_str::<RunConfig>(doc).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{err}");
        }
    }

    #[test]
    fn resolve_overrides_seed_and_validates() {
        let c = RunConfig { seed: 3, ..Default::default() }.resolve(Some(9)).unwrap();
        assert_eq!(c.seed, 9);
        let mut bad = RunConfig::default();
        bad.eval.k = 1;
        assert!(matches!(bad.resolve(None), Err(CliError::Invalid { field, .. }) if field == "eval.k"));
        let mut bad = RunConfig::default();
        bad.classifier.network.units.pop();
        assert!(bad.resolve(None).is_err());
    }
}

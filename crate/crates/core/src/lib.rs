//! Automatic quality control for brain-MRI tissue segmentations.
//!
//! Each segmentation slice is translated back into an MRI slice, compared
//! with the acquired image in all three views, and the resulting 3D error
//! map is scored by a small 3D CNN.

pub mod classifier;
pub mod errormap;
pub mod eval;
pub mod nn;
pub mod phantom;
pub mod recon;
pub mod volume;

pub use classifier::{build_qcnet, classify, ClassifierError, Prediction, QCNet, QCNetConfig, QcSample, Quality};
pub use errormap::{build_error_map, postprocess, ErrorMap, ErrorMapError, PgmError, PostprocessConfig};
pub use eval::{confusion_metrics, roc_auc, stratified_kfold, EvalError, FoldSplit, Metrics, RocCurve};
pub use nn::{NnError, Tensor};
pub use phantom::{ErrorInjection, PhantomError, PhantomSample, PhantomSpec};
pub use recon::{OracleRecon, ReconError, Reconstructor};
pub use volume::{LabelVolume, NiftiError, Slice2D, SqvError, Tissue, ViewAxis, Volume3D, VolumeError};

/// Any failure from the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Sqv(#[from] SqvError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    ErrorMap(#[from] ErrorMapError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

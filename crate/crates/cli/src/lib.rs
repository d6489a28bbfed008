//! The `segqc` command line: phantom generation, reconstructor training,
//! error maps, classifier training, prediction, evaluation and slice export.

mod commands;
pub mod config;

pub use config::RunConfig;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: malformed config: {message}")]
    Config { path: PathBuf, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: segqc::Error,
    },
    #[error(transparent)]
    Core(#[from] segqc::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, e: impl Into<segqc::Error>) -> Self {
        CliError::Data { path: path.into(), source: e.into() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "segqc", version, about = "Quality control for brain-MRI tissue segmentations")]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; stage outputs go to subdirectories.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset and its manifest.
    Phantom,
    /// Train (or set up) the slice reconstructor.
    TrainRecon(ManifestArg),
    /// Build error maps for a manifest or for one MRI/segmentation pair.
    Errormap(ErrormapArgs),
    /// Train the quality classifier on every manifest sample.
    TrainQc(ManifestArg),
    /// Score segmentations with a trained classifier.
    Classify(ClassifyArgs),
    /// Cross-validate the classifier.
    Evaluate(EvaluateArgs),
    /// Write slices of a volume as PGM images.
    ExportSlices(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    /// Dataset manifest; defaults to `<out>/phantom/manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ErrormapArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// MRI volume (.sqv or .nii); needs `--seg`.
    #[arg(long, requires = "seg")]
    pub mri: Option<PathBuf>,
    /// Segmentation volume (.sqv or .nii); needs `--mri`.
    #[arg(long, requires = "mri")]
    pub seg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    #[arg(long)]
    pub mri: Option<PathBuf>,
    /// Segmentation; its error map is built with the configured reconstructor.
    #[arg(long, requires = "mri", conflicts_with = "errormap")]
    pub seg: Option<PathBuf>,
    /// Precomputed full-resolution error map.
    #[arg(long, requires = "mri")]
    pub errormap: Option<PathBuf>,
    /// Classifier weights; defaults to `<out>/qc/qcnet.weights`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Probability at or above which a segmentation is called bad.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// Threshold for the per-fold metrics.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Volume to export (.sqv or .nii).
    #[arg(long)]
    pub input: PathBuf,
    /// axial, coronal or sagittal; all three when omitted.
    #[arg(long)]
    pub view: Option<String>,
    /// Comma-separated slice indices; the middle slice when omitted.
    #[arg(long, value_delimiter = ',')]
    pub indices: Vec<usize>,
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                log::error!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .resolve(cli.seed)?;
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("segqc-out"));
    let ctx = commands::Context { config, out };
    match cli.command {
        Command::Phantom => commands::phantom(&ctx),
        Command::TrainRecon(a) => commands::train_recon(&ctx, &a),
        Command::Errormap(a) => commands::errormap(&ctx, &a),
        Command::TrainQc(a) => commands::train_qc(&ctx, &a),
        Command::Classify(a) => commands::classify(&ctx, &a),
        Command::Evaluate(a) => commands::evaluate(&ctx, &a),
        Command::ExportSlices(a) => commands::export_slices(&ctx, &a),
    }
}

use crate::config::{ReconKind, Stage};
use crate::{ClassifyArgs, CliError, ErrormapArgs, EvaluateArgs, ExportArgs, ManifestArg, RunConfig};
use segqc::classifier::{predict_all, train_qcnet, QcTrainConfig};
use segqc::errormap::export_slices as write_slices;
use segqc::eval::{cross_validate, save_summary};
use segqc::phantom::{make_dataset, sub_seed, Intensities, Manifest, MANIFEST_FILE};
use segqc::recon::{train_pix2pix_views, Pix2PixSet, ReconTrainConfig};
use segqc::volume::{load_nifti, load_nifti_labels, read_sqv, SqvPayload};
use segqc::{
    build_error_map, postprocess, ErrorMap, LabelVolume, OracleRecon, Prediction, QCNet, QCNetConfig, QcSample,
    Reconstructor, ViewAxis, Volume3D,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

const RESOLVED: &str = "config.resolved.json";
const RECON_RECORD: &str = "recon.json";
const QC_WEIGHTS: &str = "qcnet.weights";
const QC_CONFIG: &str = "qcnet.json";

impl Context {
    fn stage_dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.out.join(name);
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        write_json(&dir.join(RESOLVED), &self.config)?;
        Ok(dir)
    }

    fn manifest(&self, arg: &ManifestArg) -> Result<Manifest, CliError> {
        let path = arg.manifest.clone().unwrap_or_else(|| self.out.join("phantom").join(MANIFEST_FILE));
        Manifest::load(&path).map_err(|e| CliError::data(path, e))
    }

    /// Seed of a stage combined with a section's own seed field.
    fn seed(&self, stage: Stage, local: u64) -> u64 {
        sub_seed(self.config.stage_seed(stage), local)
    }

    fn errormap_path(&self, id: &str) -> PathBuf {
        self.out.join("errormap").join(format!("{id}_error.sqv"))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut json = serde_json::to_vec_pretty(value).expect("serializable");
    json.push(b'\n');
    std::fs::write(path, json).map_err(|source| CliError::Io { path: path.into(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Format { path: path.into(), message: e.to_string() })
}

enum Ext {
    Sqv,
    Nifti,
}

fn extension(path: &Path) -> Result<Ext, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("sqv") => Ok(Ext::Sqv),
        Some("nii") => Ok(Ext::Nifti),
        _ => Err(CliError::Format { path: path.into(), message: "expected a .sqv or .nii file".into() }),
    }
}

fn read_sqv_file(path: &Path) -> Result<SqvPayload, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    read_sqv(&bytes).map_err(|e| CliError::data(path, e))
}

/// Intensity volume from `.sqv` or `.nii`.
fn load_volume(path: &Path) -> Result<Volume3D, CliError> {
    match extension(path)? {
        Ext::Nifti => load_nifti(path).map_err(|e| CliError::data(path, e)),
        Ext::Sqv => match read_sqv_file(path)? {
            SqvPayload::F32(v) => Ok(v),
            SqvPayload::U8(_) => {
                Err(CliError::Format { path: path.into(), message: "holds labels, expected intensities".into() })
            }
        },
    }
}

fn load_labels(path: &Path) -> Result<LabelVolume, CliError> {
    match extension(path)? {
        Ext::Nifti => load_nifti_labels(path).map_err(|e| CliError::data(path, e)),
        Ext::Sqv => match read_sqv_file(path)? {
            SqvPayload::U8(l) => Ok(l),
            SqvPayload::F32(_) => {
                Err(CliError::Format { path: path.into(), message: "holds intensities, expected labels".into() })
            }
        },
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("volume").to_string()
}

/// What `train-recon` leaves behind; paths are relative to the record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReconRecord {
    Oracle { intensities: Intensities },
    Pix2pix { subjects: Vec<String>, train: ReconTrainConfig, weights: Vec<PathBuf> },
}

fn load_reconstructor(ctx: &Context, fallback: Intensities) -> Result<Box<dyn Reconstructor>, CliError> {
    let dir = ctx.out.join("recon");
    let record_path = dir.join(RECON_RECORD);
    if !record_path.exists() {
        return match ctx.config.recon.kind {
            ReconKind::Oracle => Ok(Box::new(OracleRecon::new(fallback))),
            ReconKind::Pix2pix => Err(CliError::Io {
                path: record_path,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no trained reconstructor; run train-recon"),
            }),
        };
    }
    match read_json::<ReconRecord>(&record_path)? {
        ReconRecord::Oracle { intensities } => Ok(Box::new(OracleRecon::new(intensities))),
        ReconRecord::Pix2pix { .. } => Ok(Box::new(Pix2PixSet::load(&dir).map_err(|e| CliError::data(&dir, e))?)),
    }
}

fn make_error_map(
    ctx: &Context,
    mri: &Volume3D,
    seg: &LabelVolume,
    recon: &dyn Reconstructor,
) -> Result<ErrorMap, segqc::Error> {
    let raw = build_error_map(mri, seg, recon)?;
    if ctx.config.errormap.raw {
        Ok(raw)
    } else {
        Ok(postprocess(&raw, &ctx.config.errormap.postprocess)?)
    }
}

pub fn phantom(ctx: &Context) -> Result<(), CliError> {
    let dir = ctx.stage_dir("phantom")?;
    let p = &ctx.config.phantom;
    let seed = ctx.seed(Stage::Phantom, p.spec.seed);
    let m = make_dataset(p.n_good, p.n_bad, &p.spec, &p.injection, seed, &dir).map_err(|e| CliError::data(&dir, e))?;
    log::info!("wrote {} phantoms to {}", m.samples.len(), dir.display());
    Ok(())
}

pub fn train_recon(ctx: &Context, args: &ManifestArg) -> Result<(), CliError> {
    let manifest = ctx.manifest(args)?;
    let dir = ctx.stage_dir("recon")?;
    let record = match ctx.config.recon.kind {
        ReconKind::Oracle => ReconRecord::Oracle { intensities: manifest.spec.intensities },
        ReconKind::Pix2pix => {
            let chosen: Vec<_> =
                manifest.samples.iter().filter(|e| e.label == 0).take(ctx.config.recon.n_subjects).collect();
            if chosen.is_empty() {
                return Err(CliError::Invalid { field: "recon.n_subjects".into(), message: "no good subjects".into() });
            }
            let subjects = chosen
                .iter()
                .map(|e| manifest.load_sample(e).map_err(|err| CliError::data(manifest.resolve(&e.mri_path), err)))
                .collect::<Result<Vec<_>, _>>()?;
            let pairs: Vec<_> = subjects.iter().map(|s| (&s.seg_good, &s.mri)).collect();
            let mut train = ctx.config.recon.train.clone();
            train.seed = ctx.seed(Stage::Recon, train.seed);
            log::info!("training pix2pix on {} subjects", pairs.len());
            let (set, history) = train_pix2pix_views(&pairs, &train).map_err(|e| CliError::data(&dir, e))?;
            set.save(&dir).map_err(|e| CliError::data(&dir, e))?;
            write_json(&dir.join("history.json"), &history)?;
            ReconRecord::Pix2pix {
                subjects: chosen.iter().map(|e| e.id.clone()).collect(),
                train,
                weights: ViewAxis::ALL.iter().map(|&v| PathBuf::from(format!("{v}.weights"))).collect(),
            }
        }
    };
    write_json(&dir.join(RECON_RECORD), &record)
}

pub fn errormap(ctx: &Context, args: &ErrormapArgs) -> Result<(), CliError> {
    if let (Some(mri_path), Some(seg_path)) = (&args.mri, &args.seg) {
        let mri = load_volume(mri_path)?;
        let seg = load_labels(seg_path)?;
        let recon = load_reconstructor(ctx, ctx.config.phantom.spec.intensities)?;
        let dir = ctx.stage_dir("errormap")?;
        let map = make_error_map(ctx, &mri, &seg, recon.as_ref()).map_err(|e| CliError::data(seg_path, e))?;
        let path = dir.join(format!("{}_error.sqv", file_stem(seg_path)));
        map.save(&path).map_err(|e| CliError::data(&path, e))?;
        log::info!("wrote {}", path.display());
        return Ok(());
    }
    let manifest = ctx.manifest(&args.manifest)?;
    let recon = load_reconstructor(ctx, manifest.spec.intensities)?;
    ctx.stage_dir("errormap")?;
    for e in &manifest.samples {
        let s = manifest.load_sample(e).map_err(|err| CliError::data(manifest.resolve(&e.mri_path), err))?;
        let map = make_error_map(ctx, &s.mri, s.seg(), recon.as_ref()).map_err(|err| CliError::data(&e.id, err))?;
        let path = ctx.errormap_path(&e.id);
        map.save(&path).map_err(|err| CliError::data(&path, err))?;
        log::debug!("wrote {}", path.display());
    }
    log::info!("wrote {} error maps", manifest.samples.len());
    Ok(())
}

/// Classifier inputs for every manifest sample, from saved error maps.
fn qc_samples(ctx: &Context, manifest: &Manifest) -> Result<Vec<QcSample>, CliError> {
    manifest
        .samples
        .iter()
        .map(|e| {
            let mri_path = manifest.resolve(&e.mri_path);
            let mri = load_volume(&mri_path)?;
            let path = ctx.errormap_path(&e.id);
            let map = ErrorMap::load(&path).map_err(|err| CliError::data(&path, err))?;
            QcSample::from_full(&e.id, &mri, &map.map, e.label).map_err(|err| CliError::data(&path, err))
        })
        .collect()
}

fn qc_train_config(ctx: &Context, seed: u64) -> QcTrainConfig {
    QcTrainConfig { seed, ..ctx.config.classifier.train.clone() }
}

pub fn train_qc(ctx: &Context, args: &ManifestArg) -> Result<(), CliError> {
    let manifest = ctx.manifest(args)?;
    let samples = qc_samples(ctx, &manifest)?;
    let dir = ctx.stage_dir("qc")?;
    let cfg = qc_train_config(ctx, ctx.seed(Stage::Classifier, ctx.config.classifier.train.seed));
    log::info!("training the classifier on {} samples", samples.len());
    let (net, history) =
        train_qcnet(&samples, &ctx.config.classifier.network, &cfg).map_err(|e| CliError::data(&dir, e))?;
    let weights = dir.join(QC_WEIGHTS);
    net.save(&weights).map_err(|e| CliError::data(&weights, e))?;
    write_json(&dir.join(QC_CONFIG), &ctx.config.classifier.network)?;
    write_json(&dir.join("history.json"), &history)
}

fn check_threshold(t: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(CliError::Usage(format!("--threshold {t} is outside [0, 1]")))
    }
}

pub fn classify(ctx: &Context, args: &ClassifyArgs) -> Result<(), CliError> {
    let threshold = args.threshold.map(check_threshold).transpose()?;
    let weights = args.model.clone().unwrap_or_else(|| ctx.out.join("qc").join(QC_WEIGHTS));
    let sidecar = weights.with_file_name(QC_CONFIG);
    let network: QCNetConfig =
        if sidecar.exists() { read_json(&sidecar)? } else { ctx.config.classifier.network.clone() };
    let threshold = threshold.unwrap_or(network.threshold);
    let net: QCNet = QCNet::load(&weights, &network).map_err(|e| CliError::data(&weights, e))?;

    let samples = match (&args.mri, &args.seg, &args.errormap) {
        (Some(mri_path), seg, errmap) => {
            let mri = load_volume(mri_path)?;
            let (id, map) = match (seg, errmap) {
                (Some(seg_path), _) => {
                    let seg = load_labels(seg_path)?;
                    let recon = load_reconstructor(ctx, ctx.config.phantom.spec.intensities)?;
                    let map =
                        make_error_map(ctx, &mri, &seg, recon.as_ref()).map_err(|e| CliError::data(seg_path, e))?;
                    (file_stem(seg_path), map.map)
                }
                (None, Some(map_path)) => (file_stem(mri_path), load_volume(map_path)?),
                (None, None) => return Err(CliError::Usage("--mri needs --seg or --errormap".into())),
            };
            vec![QcSample::from_full(id, &mri, &map, 0).map_err(|e| CliError::data(mri_path, e))?]
        }
        (None, _, _) => qc_samples(ctx, &ctx.manifest(&args.manifest)?)?,
    };
    let probs = predict_all(&net, &samples).map_err(|e| CliError::data(&weights, e))?;
    let predictions: Vec<Prediction> =
        samples.iter().zip(&probs).map(|(s, &p)| Prediction::new(&s.id, p, threshold)).collect();
    for p in &predictions {
        println!("{}\t{:.6}\t{}", p.id, p.probability, if p.label == 1 { "bad" } else { "good" });
    }
    let dir = ctx.stage_dir("qc")?;
    write_json(&dir.join("predictions.json"), &predictions)
}

pub fn evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<(), CliError> {
    let network = &ctx.config.classifier.network;
    let threshold = args.threshold.map(check_threshold).transpose()?.unwrap_or(network.threshold);
    let manifest = ctx.manifest(&args.manifest)?;
    let samples = qc_samples(ctx, &manifest)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let dir = ctx.stage_dir("eval")?;
    let local = ctx.config.classifier.train.seed;
    let summary = cross_validate(
        &labels,
        ctx.config.eval.k,
        ctx.config.stage_seed(Stage::Eval),
        threshold,
        &ctx.config.eval.grid,
        |f, train, test, seed| {
            log::info!("fold {f}: training on {} samples", train.len());
            let train_set: Vec<QcSample> = train.iter().map(|&i| samples[i].clone()).collect();
            let test_set: Vec<QcSample> = test.iter().map(|&i| samples[i].clone()).collect();
            let (net, _) = train_qcnet(&train_set, network, &qc_train_config(ctx, sub_seed(seed, local)))
                .map_err(|e| e.to_string())?;
            predict_all(&net, &test_set).map_err(|e| e.to_string())
        },
    )
    .map_err(|e| CliError::data(&dir, e))?;
    save_summary(&summary, &dir, "cv").map_err(|e| CliError::data(&dir, e))?;
    println!(
        "pooled AUC {:.4}; accuracy {:.4}, recall {:.4} at threshold {threshold}",
        summary.pooled_auc, summary.pooled.accuracy, summary.pooled.recall
    );
    Ok(())
}

pub fn export_slices(ctx: &Context, args: &ExportArgs) -> Result<(), CliError> {
    let views = match &args.view {
        Some(v) => vec![v.parse::<ViewAxis>().map_err(CliError::Usage)?],
        None => ViewAxis::ALL.to_vec(),
    };
    let vol = match extension(&args.input)? {
        Ext::Nifti => load_volume(&args.input)?,
        Ext::Sqv => match read_sqv_file(&args.input)? {
            SqvPayload::F32(v) => v,
            // tissue codes spread over the grey range
            SqvPayload::U8(l) => Volume3D::new(l.dims(), l.labels().iter().map(|&c| c as f32 / 3.0).collect())
                .map_err(|e| CliError::data(&args.input, e))?,
        },
    };
    let dir = ctx.out.join("slices");
    let prefix = file_stem(&args.input);
    for view in views {
        let indices = if args.indices.is_empty() { vec![view.extent(vol.dims()) / 2] } else { args.indices.clone() };
        let paths = write_slices(&vol, view, &indices, &dir, &prefix).map_err(|e| CliError::data(&args.input, e))?;
        for p in paths {
            log::info!("wrote {}", p.display());
        }
    }
    Ok(())
}

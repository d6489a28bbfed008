//! 3D CNN that scores a segmentation from its half-resolution error map and
//! MRI: six conv/BN/relu stages, global average pooling and two dense layers.

use crate::nn::{
    check_finite, compute_loss, load_weights, save_weights, Activation, Adam, AdamConfig, BatchNorm, Conv, Dense,
    GlobalAvgPool, Layer, LossKind, Mode, NnError, Real, Sequential, Tensor,
};
use crate::phantom::sub_seed;
use crate::volume::{downsample_half, Dims, Volume3D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONV_UNITS: [usize; 6] = [32, 32, 64, 64, 128, 128];
pub const CONV_STRIDES: [usize; 6] = [1, 2, 1, 2, 1, 2];
pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// Probabilities are kept this far from 0 and 1.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("MRI dims {mri:?} differ from error map dims {errmap:?}")]
    DimMismatch { mri: Dims, errmap: Dims },
    #[error("input dims {dims:?} too small, every axis needs at least {min} voxels")]
    TooSmall { dims: Dims, min: usize },
    #[error("training set: {0}")]
    Dataset(String),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QCNetConfig {
    pub in_channels: usize,
    pub units: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub dense_units: usize,
    pub threshold: f64,
}

impl Default for QCNetConfig {
    fn default() -> Self {
        QCNetConfig {
            in_channels: 2,
            units: CONV_UNITS.to_vec(),
            strides: CONV_STRIDES.to_vec(),
            kernel: 3,
            dense_units: 128,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl QCNetConfig {
    /// Checks shape consistency only; `validate` also pins the unit list.
    fn check_shape(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidConfig(m));
        if self.units.len() != 6 {
            return bad(format!("expected six conv layers, got {}", self.units.len()));
        }
        if self.strides.len() != self.units.len() {
            return bad(format!("{} strides for {} conv layers", self.strides.len(), self.units.len()));
        }
        if self.in_channels == 0 || self.dense_units == 0 || self.units.contains(&0) {
            return bad("channel and unit counts must be positive".into());
        }
        if self.strides.contains(&0) {
            return bad("strides must be positive".into());
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        self.check_shape()?;
        if self.units != CONV_UNITS {
            return Err(ClassifierError::InvalidConfig(format!(
                "conv units must be {CONV_UNITS:?}, got {:?}",
                self.units
            )));
        }
        if self.kernel != 3 {
            return Err(ClassifierError::InvalidConfig(format!("kernel must be 3, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Smallest accepted extent per axis.
    pub fn min_extent(&self) -> usize {
        self.strides.iter().product()
    }

    /// Trainable parameters implied by the config.
    pub fn parameter_count(&self) -> usize {
        let k3 = self.kernel.pow(3);
        let mut c_in = self.in_channels;
        let mut total = 0;
        for &u in &self.units {
            total += k3 * c_in * u + u + 2 * u;
            c_in = u;
        }
        total + c_in * self.dense_units + self.dense_units + self.dense_units + 1
    }
}

/// A built network plus its config.
pub struct QCNet<T: Real = f32> {
    pub config: QCNetConfig,
    pub net: Sequential<T>,
}

impl<T: Real> QCNet<T> {
    pub fn build(config: &QCNetConfig, seed: u64) -> Result<Self, ClassifierError> {
        config.validate()?;
        Ok(Self::assemble(config, seed, false))
    }

    /// Skips the unit-list check; used for narrow test networks.
    pub(crate) fn assemble(config: &QCNetConfig, seed: u64, input_grad: bool) -> Self {
        config.check_shape().expect("shape-checked config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new();
        let mut c_in = config.in_channels;
        let pad = config.kernel / 2;
        for (i, (&u, &s)) in config.units.iter().zip(&config.strides).enumerate() {
            let conv = Conv::new3d(c_in, u, config.kernel, s, pad, &mut rng);
            // nothing upstream of the first conv needs a gradient
            net.push(if i == 0 && !input_grad { conv.without_input_grad() } else { conv });
            net.push(BatchNorm::new(u));
            net.push(Activation::relu());
            c_in = u;
        }
        net.push(GlobalAvgPool::new());
        net.push(Dense::new(c_in, config.dense_units, &mut rng));
        net.push(Activation::relu());
        net.push(Dense::new(config.dense_units, 1, &mut rng));
        net.push(Activation::sigmoid());
        QCNet { config: config.clone(), net }
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    fn check_input(&self, mri: &Volume3D, errmap: &Volume3D) -> Result<(), ClassifierError> {
        if mri.dims() != errmap.dims() {
            return Err(ClassifierError::DimMismatch { mri: mri.dims(), errmap: errmap.dims() });
        }
        let (x, y, z) = mri.dims();
        let min = self.config.min_extent();
        if x.min(y).min(z) < min {
            return Err(ClassifierError::TooSmall { dims: mri.dims(), min });
        }
        Ok(())
    }

    /// Probability that the segmentation is bad, in eval mode. Inputs are the
    /// half-resolution MRI and error map, both on [0, 1].
    pub fn predict(&self, mri: &Volume3D, errmap: &Volume3D) -> Result<f64, ClassifierError> {
        self.check_input(mri, errmap)?;
        let x = input_tensor::<T>(&[(mri, errmap)]);
        Ok(self.probabilities(&x)?[0])
    }

    /// Batched eval-mode forward, one probability per sample.
    fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<f64>, ClassifierError> {
        let layers = self.net.layers();
        let (last, body) = layers.split_last().expect("non-empty network");
        debug_assert_eq!(last.kind(), "sigmoid");
        let mut h = x.clone();
        for layer in body {
            h = layer.infer(&h)?;
        }
        // sigmoid in f64 from the logit so saturation cannot hit 0 or 1
        Ok(h.data().iter().map(|z| (1.0 / (1.0 + (-z.as_f64()).exp())).clamp(PROB_EPS, 1.0 - PROB_EPS)).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        Ok(save_weights(path, &self.net)?)
    }

    pub fn load(path: impl AsRef<Path>, config: &QCNetConfig) -> Result<Self, ClassifierError> {
        let mut net = Self::build(config, 0)?;
        load_weights(path, &mut net.net)?;
        Ok(net)
    }
}

/// Builds an f32 network with the standard layer layout.
pub fn build_qcnet(config: &QCNetConfig, seed: u64) -> Result<QCNet, ClassifierError> {
    QCNet::build(config, seed)
}

/// `[N, 2, z, y, x]` with the error map in channel 0 and the MRI in channel 1.
fn input_tensor<T: Real>(items: &[(&Volume3D, &Volume3D)]) -> Tensor<T> {
    let (nx, ny, nz) = items[0].0.dims();
    let mut data = Vec::with_capacity(items.len() * 2 * nx * ny * nz);
    for (mri, errmap) in items {
        data.extend(errmap.data().iter().map(|&v| T::from_f64(v as f64)));
        data.extend(mri.data().iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[items.len(), 2, nz, ny, nx], data).expect("consistent dims")
}

/// Good or bad segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Good = 0,
    Bad = 1,
}

impl Quality {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Bad iff `p >= threshold`.
pub fn classify(p: f64, threshold: f64) -> Quality {
    if p >= threshold {
        Quality::Bad
    } else {
        Quality::Good
    }
}

/// One classifier output as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub probability: f64,
    pub label: u8,
    pub threshold: f64,
}

impl Prediction {
    pub fn new(id: impl Into<String>, probability: f64, threshold: f64) -> Self {
        Prediction { id: id.into(), probability, label: classify(probability, threshold).code(), threshold }
    }
}

/// Half-resolution classifier inputs for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct QcSample {
    pub id: String,
    pub mri: Volume3D,
    pub errmap: Volume3D,
    pub label: u8,
}

impl QcSample {
    /// Pools both full-resolution volumes by two and rescales the MRI to
    /// [0, 1] by its min and max.
    pub fn from_full(
        id: impl Into<String>,
        mri: &Volume3D,
        errmap: &Volume3D,
        label: u8,
    ) -> Result<Self, ClassifierError> {
        if mri.dims() != errmap.dims() {
            return Err(ClassifierError::DimMismatch { mri: mri.dims(), errmap: errmap.dims() });
        }
        let (lo, hi) = (mri.min(), mri.max());
        let scaled = if hi > lo { mri.map(|v| (v - lo) / (hi - lo)) } else { mri.map(|_| 0.0) };
        Ok(QcSample { id: id.into(), mri: downsample_half(&scaled).0, errmap: downsample_half(errmap).0, label })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Forward-only passes over the training set after the last epoch; the
    /// batch-norm running statistics become their plain average.
    pub bn_refresh_passes: usize,
}

impl Default for QcTrainConfig {
    fn default() -> Self {
        QcTrainConfig { epochs: 4, batch_size: 8, lr: 1e-3, seed: 0, bn_refresh_passes: 1 }
    }
}

/// Mean training loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Batches of `order`; a trailing single sample joins the previous batch
/// because train-mode batch norm needs two.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Adam + BCE training from a seeded initialization.
pub fn train_qcnet(
    samples: &[QcSample],
    net_cfg: &QCNetConfig,
    cfg: &QcTrainConfig,
) -> Result<(QCNet, Vec<EpochLoss>), ClassifierError> {
    let net = QCNet::build(net_cfg, sub_seed(cfg.seed, 0))?;
    fit(net, samples, cfg)
}

fn fit<T: Real>(
    mut net: QCNet<T>,
    samples: &[QcSample],
    cfg: &QcTrainConfig,
) -> Result<(QCNet<T>, Vec<EpochLoss>), ClassifierError> {
    if samples.len() < 2 {
        return Err(ClassifierError::Dataset(format!("need at least 2 samples, got {}", samples.len())));
    }
    if cfg.batch_size < 2 {
        return Err(ClassifierError::Dataset(format!("batch size {} below 2", cfg.batch_size)));
    }
    for s in samples {
        net.check_input(&s.mri, &s.errmap)?;
        if s.mri.dims() != samples[0].mri.dims() {
            return Err(ClassifierError::Dataset(format!(
                "{} has dims {:?}, expected {:?}",
                s.id,
                s.mri.dims(),
                samples[0].mri.dims()
            )));
        }
        if s.label > 1 {
            return Err(ClassifierError::Dataset(format!("{} has label {}", s.id, s.label)));
        }
    }
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let items: Vec<_> = batch.iter().map(|&i| (&samples[i].mri, &samples[i].errmap)).collect();
            let x = input_tensor::<T>(&items);
            let y = Tensor::from_vec(
                &[batch.len(), 1],
                batch.iter().map(|&i| T::from_f64(samples[i].label as f64)).collect(),
            )?;
            let p = net.net.forward(&x, Mode::Train)?;
            check_finite(&p, "classifier forward")?;
            let (loss, grad) = compute_loss(LossKind::Bce, &p, &y)?;
            net.net.backward(&grad)?;
            opt.step(net.net.params_mut())?;
            net.net.zero_grad();
            total += loss.as_f64() * batch.len() as f64;
        }
        let loss = total / samples.len() as f64;
        log::debug!("qcnet epoch {epoch}: loss {loss:.4}");
        history.push(EpochLoss { epoch, loss });
    }
    net.net.average_running_stats(cfg.bn_refresh_passes > 0);
    for _ in 0..cfg.bn_refresh_passes {
        for batch in batches(&order, cfg.batch_size) {
            let items: Vec<_> = batch.iter().map(|&i| (&samples[i].mri, &samples[i].errmap)).collect();
            net.net.forward(&input_tensor::<T>(&items), Mode::Train)?;
        }
    }
    net.net.average_running_stats(false);
    Ok((net, history))
}

/// Eval-mode probabilities for many samples, computed in parallel.
pub fn predict_all<T: Real>(net: &QCNet<T>, samples: &[QcSample]) -> Result<Vec<f64>, ClassifierError> {
    samples.par_iter().map(|s| net.predict(&s.mri, &s.errmap)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_check, GradCheckOptions};
    use rand::Rng;

    /// Closed form written out layer by layer.
    fn oracle_count(c_in: usize, units: &[usize], dense: usize) -> usize {
        let mut prev = c_in;
        let mut n = 0;
        for &u in units {
            n += 27 * prev * u + u; // conv weight + bias
            n += 2 * u; // batch norm scale + shift
            prev = u;
        }
        n + (prev * dense + dense) + (dense + 1)
    }

    fn tiny() -> QCNetConfig {
        QCNetConfig { units: vec![2; 6], dense_units: 3, ..Default::default() }
    }

    fn random_volume(dims: Dims, rng: &mut impl Rng) -> Volume3D {
        Volume3D::from_fn(dims, |_, _, _| rng.gen())
    }

    #[test]
    fn default_parameter_count() {
        let net = build_qcnet(&QCNetConfig::default(), 0).unwrap();
        assert_eq!(net.parameter_count(), 876_801);
        assert_eq!(oracle_count(2, &CONV_UNITS, 128), 876_801);
        assert_eq!(QCNetConfig::default().parameter_count(), 876_801);
    }

    #[test]
    fn parameter_count_matches_oracle_for_other_shapes() {
        for (c, units, dense) in [(1, vec![4, 5, 6, 7, 8, 9], 10), (3, vec![2; 6], 1), (2, vec![1, 3, 1, 3, 1, 3], 7)] {
            let cfg = QCNetConfig { in_channels: c, units: units.clone(), dense_units: dense, ..Default::default() };
            let net = QCNet::<f32>::assemble(&cfg, 1, false);
            assert_eq!(net.parameter_count(), oracle_count(c, &units, dense));
            assert_eq!(cfg.parameter_count(), oracle_count(c, &units, dense));
        }
    }

    #[test]
    fn rejects_configs_off_the_contract() {
        let five = QCNetConfig { units: vec![32, 32, 64, 64, 128], strides: vec![1, 2, 1, 2, 1], ..Default::default() };
        assert!(matches!(build_qcnet(&five, 0), Err(ClassifierError::InvalidConfig(_))));
        let seven = QCNetConfig { units: vec![32; 7], strides: vec![1; 7], ..Default::default() };
        assert!(build_qcnet(&seven, 0).is_err());
        let other_units = QCNetConfig { units: vec![16, 32, 64, 64, 128, 128], ..Default::default() };
        assert!(build_qcnet(&other_units, 0).is_err());
        assert!(build_qcnet(&QCNetConfig { kernel: 5, ..Default::default() }, 0).is_err());
        assert!(build_qcnet(&QCNetConfig { strides: vec![1, 2, 1], ..Default::default() }, 0).is_err());
        assert!(build_qcnet(&QCNetConfig { threshold: 1.5, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_qcnet(&QCNetConfig::default(), 3).unwrap();
        let b = build_qcnet(&QCNetConfig::default(), 3).unwrap();
        let c = build_qcnet(&QCNetConfig::default(), 4).unwrap();
        let values = |n: &QCNet| n.net.params().iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<f32>>();
        assert_eq!(values(&a), values(&b));
        assert_ne!(values(&a), values(&c));
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(classify(0.41, 0.4), Quality::Bad);
        assert_eq!(classify(0.39, 0.4), Quality::Good);
        assert_eq!(classify(0.30, 0.3), Quality::Bad);
        let p = Prediction::new("s0001", 0.4, 0.4);
        assert_eq!(p.label, 1);
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["id"], "s0001");
        assert_eq!(json["threshold"], 0.4);
    }

    #[test]
    fn predictions_lie_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QCNet::<f32>::assemble(&QCNetConfig { units: vec![4; 6], ..Default::default() }, 0, false);
        for n in [8, 12] {
            let (m, e) = (random_volume((n, n, n), &mut rng), random_volume((n, n, n), &mut rng));
            let p = net.predict(&m, &e).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
        // a huge output bias must still not reach 1
        let mut net = net;
        let last = net.net.layers().len() - 2;
        let params = net.net.layers_mut()[last].params_mut();
        for p in params {
            p.value.fill(1e4);
        }
        let m = random_volume((8, 8, 8), &mut rng);
        let p = net.predict(&m, &m).unwrap();
        assert!(p < 1.0 && p > 0.5);
    }

    #[test]
    fn accepts_both_input_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = build_qcnet(&QCNetConfig::default(), 0).unwrap();
        for n in [32, 16] {
            let v = random_volume((n, n, n), &mut rng);
            assert!(net.predict(&v, &v).is_ok());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = QCNet::<f32>::assemble(&tiny(), 0, false);
        let a = Volume3D::zeros((8, 8, 8));
        assert!(matches!(net.predict(&a, &Volume3D::zeros((8, 8, 9))), Err(ClassifierError::DimMismatch { .. })));
        let small = Volume3D::zeros((8, 7, 8));
        assert!(matches!(net.predict(&small, &small), Err(ClassifierError::TooSmall { min: 8, .. })));
    }

    #[test]
    fn batched_eval_matches_single_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QCNet::<f32>::assemble(&QCNetConfig { units: vec![3; 6], ..Default::default() }, 2, false);
        let vols: Vec<(Volume3D, Volume3D)> =
            (0..3).map(|_| (random_volume((8, 8, 8), &mut rng), random_volume((8, 8, 8), &mut rng))).collect();
        let items: Vec<_> = vols.iter().map(|(m, e)| (m, e)).collect();
        let batched = net.probabilities(&input_tensor::<f32>(&items)).unwrap();
        for (i, (m, e)) in vols.iter().enumerate() {
            assert_eq!(batched[i], net.predict(m, e).unwrap());
        }
    }

    #[test]
    fn tiny_net_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = QCNet::<f64>::assemble(&tiny(), 4, true);
        // with two channels a sample's pooled features can be exactly zero;
        // offset the dense biases so no pre-activation sits on the relu hinge
        for layer in net.net.layers_mut().iter_mut().filter(|l| l.kind() == "dense") {
            for p in layer.params_mut().into_iter().filter(|p| p.name == "bias") {
                p.value.fill(0.1);
            }
        }
        let x =
            Tensor::from_vec(&[2, 2, 8, 8, 8], (0..2 * 2 * 512).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let opts = GradCheckOptions { eps: 1e-6, max_probes: Some(40), ..Default::default() };
        let report = finite_difference_check(&mut net.net, &x, opts).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn batches_never_leave_a_singleton() {
        let order: Vec<usize> = (0..17).collect();
        let b = batches(&order, 8);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![8, 9]);
        let order: Vec<usize> = (0..18).collect();
        assert_eq!(batches(&order, 8).iter().map(|b| b.len()).collect::<Vec<_>>(), vec![8, 8, 2]);
        assert_eq!(batches(&order[..1], 8).len(), 1);
    }

    fn toy_samples(n: usize, all_good: bool, rng: &mut impl Rng) -> Vec<QcSample> {
        // bad samples carry a bright cube in the error map
        (0..n)
            .map(|i| {
                let label = if all_good { 0 } else { (i % 2) as u8 };
                let mri = random_volume((8, 8, 8), rng);
                let errmap = Volume3D::from_fn((8, 8, 8), |x, y, z| {
                    if label == 1 && (2..5).contains(&x) && (3..6).contains(&y) && (2..6).contains(&z) {
                        0.8
                    } else {
                        0.02
                    }
                });
                QcSample { id: format!("t{i}"), mri, errmap, label }
            })
            .collect()
    }

    fn small_net() -> QCNetConfig {
        QCNetConfig { units: vec![4, 4, 8, 8, 8, 8], dense_units: 8, ..Default::default() }
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = toy_samples(20, false, &mut rng);
        let cfg = QcTrainConfig { epochs: 30, batch_size: 8, lr: 3e-3, seed: 2, ..Default::default() };
        let (net, hist) = fit(QCNet::<f32>::assemble(&small_net(), 7, false), &data, &cfg).unwrap();
        assert_eq!(hist.len(), 30);
        assert!(hist.last().unwrap().loss < hist[0].loss, "{hist:?}");
        let (again, _) = fit(QCNet::<f32>::assemble(&small_net(), 7, false), &data, &cfg).unwrap();
        let values = |n: &QCNet| n.net.params().iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<f32>>();
        assert_eq!(values(&net), values(&again));
        let p = predict_all(&net, &data).unwrap();
        assert_eq!(p.len(), 20);
    }

    #[test]
    fn all_good_labels_drive_probabilities_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = toy_samples(12, true, &mut rng);
        let cfg = QcTrainConfig { epochs: 30, batch_size: 4, lr: 3e-3, seed: 0, ..Default::default() };
        let (net, _) = fit(QCNet::<f32>::assemble(&small_net(), 1, false), &data, &cfg).unwrap();
        let p = predict_all(&net, &data).unwrap();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!(mean < 0.2, "mean probability {mean}");
    }

    #[test]
    fn training_rejects_bad_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = QcTrainConfig::default();
        let net = || QCNet::<f32>::assemble(&tiny(), 0, false);
        assert!(matches!(fit(net(), &[], &cfg), Err(ClassifierError::Dataset(_))));
        let mut data = toy_samples(3, false, &mut rng);
        data[2].mri = Volume3D::zeros((9, 9, 9));
        data[2].errmap = Volume3D::zeros((9, 9, 9));
        assert!(fit(net(), &data, &cfg).is_err());
        let mut data = toy_samples(3, false, &mut rng);
        data[1].errmap = Volume3D::zeros((8, 8, 9));
        assert!(matches!(fit(net(), &data, &cfg), Err(ClassifierError::DimMismatch { .. })));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = build_qcnet(&QCNetConfig::default(), 6).unwrap();
        let path = dir.path().join("qc.weights");
        net.save(&path).unwrap();
        let back = QCNet::<f32>::load(&path, &QCNetConfig::default()).unwrap();
        let v = Volume3D::filled((8, 8, 8), 0.3);
        assert_eq!(net.predict(&v, &v).unwrap(), back.predict(&v, &v).unwrap());
    }

    #[test]
    fn from_full_pools_and_rescales() {
        let mri = Volume3D::from_fn((4, 4, 4), |x, _, _| 10.0 + x as f32);
        let s = QcSample::from_full("a", &mri, &Volume3D::zeros((4, 4, 4)), 1).unwrap();
        assert_eq!(s.mri.dims(), (2, 2, 2));
        assert!((s.mri.get(0, 0, 0) - 1.0 / 6.0).abs() < 1e-6);
        assert!((s.mri.get(1, 0, 0) - 5.0 / 6.0).abs() < 1e-6);
    }
}

//! Toy pix2pix: a U-Net generator and a conditional PatchGAN
//! discriminator, one pair per view.

use super::{sample_training_slices, OneHotSlice, ReconError, Reconstructor, SliceRef};
use crate::nn::{
    compute_loss, load_weights, save_weights, Activation, Adam, AdamConfig, Affine, Conv, ConvTranspose, Layer,
    LossKind, Mode, NnError, Sequential, Tensor, UNet,
};
use crate::phantom::sub_seed;
use crate::volume::{LabelVolume, Slice2D, ViewAxis, Volume3D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Total downsampling of the generator; inputs are zero-padded to a multiple.
const STRIDE_PRODUCT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconTrainConfig {
    pub slice_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub lambda_l1: f64,
    pub seed: u64,
}

impl Default for ReconTrainConfig {
    fn default() -> Self {
        ReconTrainConfig {
            slice_fraction: 0.10,
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            beta1: 0.5,
            lambda_l1: 100.0,
            seed: 0,
        }
    }
}

impl ReconTrainConfig {
    pub fn validate(&self) -> Result<(), ReconError> {
        if !(self.slice_fraction > 0.0 && self.slice_fraction <= 1.0) {
            return Err(ReconError::BadFraction(self.slice_fraction));
        }
        if self.batch_size == 0 || self.lambda_l1 < 0.0 || self.lr <= 0.0 {
            return Err(ReconError::Empty(format!(
                "batch_size {} / lambda_l1 {} / lr {} out of range",
                self.batch_size, self.lambda_l1, self.lr
            )));
        }
        Ok(())
    }
}

/// Losses of one generator/discriminator update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
}

pub fn build_generator(rng: &mut ChaCha8Rng) -> UNet<f32> {
    let down = |cin, cout, rng: &mut ChaCha8Rng| {
        Sequential::new().with(Conv::new2d(cin, cout, 4, 2, 1, rng)).with(Activation::leaky_relu(0.2))
    };
    let first =
        Sequential::new().with(Conv::new2d(3, 32, 4, 2, 1, rng).without_input_grad()).with(Activation::leaky_relu(0.2));
    let encoder = vec![first, down(32, 64, rng), down(64, 128, rng)];
    let middle = Sequential::new().with(Conv::new2d(128, 128, 3, 1, 1, rng)).with(Activation::leaky_relu(0.2));
    let up = |cin, cout, rng: &mut ChaCha8Rng| {
        Sequential::new().with(ConvTranspose::new2d(cin, cout, 4, 2, 1, rng)).with(Activation::leaky_relu(0.2))
    };
    let last = Sequential::new()
        .with(ConvTranspose::new2d(64, 1, 4, 2, 1, rng))
        .with(Activation::tanh())
        .with(Affine::unit_interval());
    let decoder = vec![up(256, 64, rng), up(128, 32, rng), last];
    UNet::new(encoder, middle, decoder)
}

/// Conditional PatchGAN over `[one-hot, image]` (4 channels).
pub fn build_discriminator(rng: &mut ChaCha8Rng) -> Sequential<f32> {
    Sequential::new()
        .with(Conv::new2d(4, 32, 4, 2, 1, rng))
        .with(Activation::leaky_relu(0.2))
        .with(Conv::new2d(32, 64, 4, 2, 1, rng))
        .with(Activation::leaky_relu(0.2))
        .with(Conv::new2d(64, 128, 4, 2, 1, rng))
        .with(Activation::leaky_relu(0.2))
        .with(Conv::new2d(128, 1, 3, 1, 1, rng))
        .with(Activation::sigmoid())
}

fn padded(n: usize) -> usize {
    n.div_ceil(STRIDE_PRODUCT) * STRIDE_PRODUCT
}

fn input_batch(items: &[&OneHotSlice]) -> Tensor<f32> {
    let (w, h) = items[0].dims();
    let (pw, ph) = (padded(w), padded(h));
    let mut t = Tensor::zeros(&[items.len(), 3, ph, pw]);
    for (i, s) in items.iter().enumerate() {
        let dst = t.sample_mut(i);
        for c in 0..3 {
            for v in 0..h {
                let src = &s.data()[(c * h + v) * w..(c * h + v + 1) * w];
                dst[(c * ph + v) * pw..(c * ph + v) * pw + w].copy_from_slice(src);
            }
        }
    }
    t
}

fn target_batch(items: &[&Slice2D]) -> Tensor<f32> {
    let (w, h) = items[0].dims();
    let (pw, ph) = (padded(w), padded(h));
    let mut t = Tensor::zeros(&[items.len(), 1, ph, pw]);
    for (i, s) in items.iter().enumerate() {
        let dst = t.sample_mut(i);
        for v in 0..h {
            dst[v * pw..v * pw + w].copy_from_slice(&s.data[v * w..(v + 1) * w]);
        }
    }
    t
}

fn crop(t: &Tensor<f32>, i: usize, w: usize, h: usize) -> Slice2D {
    let pw = padded(w);
    let src = t.sample(i);
    let data = (0..h).flat_map(|v| src[v * pw..v * pw + w].iter().copied()).collect();
    Slice2D::new(w, h, data)
}

/// Generator/discriminator pair for one view.
pub struct Pix2PixModel {
    pub view: ViewAxis,
    generator: UNet<f32>,
    discriminator: Sequential<f32>,
}

impl Pix2PixModel {
    pub fn new(view: ViewAxis, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = build_generator(&mut rng);
        let discriminator = build_discriminator(&mut rng);
        Pix2PixModel { view, generator, discriminator }
    }

    pub fn generator(&self) -> &UNet<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> &Sequential<f32> {
        &self.discriminator
    }

    /// Generator output for one slice.
    pub fn generate(&self, labels: &OneHotSlice) -> Result<Slice2D, ReconError> {
        let (w, h) = labels.dims();
        let out = self.generator.infer(&input_batch(&[labels]))?;
        Ok(crop(&out, 0, w, h))
    }

    /// Conditional patch map for an image given its labels.
    pub fn discriminate(&self, labels: &OneHotSlice, image: &Slice2D) -> Result<Tensor<f32>, ReconError> {
        let x = Tensor::concat_channels(&input_batch(&[labels]), &target_batch(&[image]))?;
        Ok(self.discriminator.infer(&x)?)
    }

    fn train_step(
        &mut self,
        x: &Tensor<f32>,
        y: &Tensor<f32>,
        opt_g: &mut Adam<f32>,
        opt_d: &mut Adam<f32>,
        lambda_l1: f64,
    ) -> Result<(f64, f64, f64), NnError> {
        let (g, d) = (&mut self.generator, &mut self.discriminator);
        let fake = g.forward(x, Mode::Train)?;

        let real_in = Tensor::concat_channels(x, y)?;
        let p_real = d.forward(&real_in, Mode::Train)?;
        let (l_real, mut grad) =
            compute_loss(LossKind::GanDiscriminator, &p_real, &Tensor::filled(p_real.shape(), 1.0))?;
        grad.scale(0.5);
        d.backward(&grad)?;
        let fake_in = Tensor::concat_channels(x, &fake)?;
        let p_fake = d.forward(&fake_in, Mode::Train)?;
        let (l_fake, mut grad) = compute_loss(LossKind::GanDiscriminator, &p_fake, &Tensor::zeros(p_fake.shape()))?;
        grad.scale(0.5);
        d.backward(&grad)?;
        opt_d.step(d.params_mut())?;
        d.zero_grad();

        let p = d.forward(&fake_in, Mode::Train)?;
        let (l_adv, grad) = compute_loss(LossKind::GanGenerator, &p, &p)?;
        let (_, mut d_fake) = d.backward(&grad)?.split_channels(3)?;
        d.zero_grad();
        let (l1, mut g_l1) = compute_loss(LossKind::L1, &fake, y)?;
        g_l1.scale(lambda_l1 as f32);
        d_fake.add_assign(&g_l1)?;
        g.backward(&d_fake)?;
        opt_g.step(g.params_mut())?;
        g.zero_grad();
        Ok((0.5 * (l_real + l_fake) as f64, l_adv as f64, l1 as f64))
    }
}

impl Reconstructor for Pix2PixModel {
    fn id(&self) -> String {
        format!("pix2pix-{}", self.view)
    }

    /// A lone model serves every view.
    fn reconstruct(&self, _view: ViewAxis, labels: &OneHotSlice) -> Result<Slice2D, ReconError> {
        self.generate(labels)
    }
}

/// One model per view, dispatched by the slice's view.
pub struct Pix2PixSet {
    models: Vec<Pix2PixModel>,
}

impl Pix2PixSet {
    pub fn new(models: Vec<Pix2PixModel>) -> Self {
        Pix2PixSet { models }
    }

    pub fn get(&self, view: ViewAxis) -> Option<&Pix2PixModel> {
        self.models.iter().find(|m| m.view == view)
    }

    pub fn weights_path(dir: &Path, view: ViewAxis) -> std::path::PathBuf {
        dir.join(format!("{view}.weights"))
    }

    /// Saves each generator as `<view>.weights`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), ReconError> {
        for m in &self.models {
            save_weights(Self::weights_path(dir.as_ref(), m.view), m.generator.as_sequential())?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ReconError> {
        let models = ViewAxis::ALL
            .into_iter()
            .map(|view| {
                let mut m = Pix2PixModel::new(view, 0);
                load_weights(Self::weights_path(dir.as_ref(), view), m.generator.as_sequential_mut())?;
                Ok(m)
            })
            .collect::<Result<Vec<_>, ReconError>>()?;
        Ok(Pix2PixSet { models })
    }
}

impl Reconstructor for Pix2PixSet {
    fn id(&self) -> String {
        "pix2pix".into()
    }

    fn reconstruct(&self, view: ViewAxis, labels: &OneHotSlice) -> Result<Slice2D, ReconError> {
        self.get(view).ok_or(ReconError::MissingView(view))?.generate(labels)
    }
}

/// Trains one view's model on `(labels, mri)` slice pairs.
///
/// Each step updates the discriminator on a real and a generated batch,
/// then the generator on `gan_generator + lambda_l1 * l1`. The history
/// holds one record per step.
pub fn train_pix2pix(
    pairs: &[(OneHotSlice, Slice2D)],
    view: ViewAxis,
    cfg: &ReconTrainConfig,
) -> Result<(Pix2PixModel, Vec<LossRecord>), ReconError> {
    cfg.validate()?;
    let first = pairs.first().ok_or_else(|| ReconError::Empty("no training pairs".into()))?;
    let dims = first.0.dims();
    for (x, y) in pairs {
        for actual in [x.dims(), y.dims()] {
            if actual != dims {
                return Err(ReconError::DimMismatch { expected: dims, actual });
            }
        }
    }
    let view_seed = sub_seed(cfg.seed, view as u64);
    let mut model = Pix2PixModel::new(view, view_seed);
    let adam = AdamConfig { lr: cfg.lr, beta1: cfg.beta1, ..Default::default() };
    let (mut opt_g, mut opt_d) = (Adam::new(adam), Adam::new(adam));
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(view_seed, 1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs * pairs.len().div_ceil(cfg.batch_size));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&OneHotSlice> = batch.iter().map(|&i| &pairs[i].0).collect();
            let ys: Vec<&Slice2D> = batch.iter().map(|&i| &pairs[i].1).collect();
            let (d_loss, g_adv, g_l1) =
                model.train_step(&input_batch(&xs), &target_batch(&ys), &mut opt_g, &mut opt_d, cfg.lambda_l1)?;
            history.push(LossRecord { epoch, d_loss, g_adv, g_l1 });
        }
        if let Some(last) = history.last() {
            log::debug!("pix2pix {view} epoch {epoch}: d {:.4} adv {:.4} l1 {:.4}", last.d_loss, last.g_adv, last.g_l1);
        }
    }
    Ok((model, history))
}

/// `(labels, mri)` pairs of `view` for the selected slices.
pub fn training_pairs(
    subjects: &[(&LabelVolume, &Volume3D)],
    refs: &[SliceRef],
    view: ViewAxis,
) -> Result<Vec<(OneHotSlice, Slice2D)>, ReconError> {
    refs.iter()
        .filter(|r| r.view == view)
        .map(|r| {
            let (seg, mri) = subjects[r.subject];
            let labels = seg.extract_slice(view, r.index).map_err(|e| ReconError::Empty(e.to_string()))?;
            let image = mri.extract_slice(view, r.index).map_err(|e| ReconError::Empty(e.to_string()))?;
            Ok((OneHotSlice::from_labels(&labels)?, image))
        })
        .collect()
}

/// Per-view loss histories.
pub type ViewHistories = Vec<(ViewAxis, Vec<LossRecord>)>;

/// Samples slices from every subject and trains the three views in parallel.
pub fn train_pix2pix_views(
    subjects: &[(&LabelVolume, &Volume3D)],
    cfg: &ReconTrainConfig,
) -> Result<(Pix2PixSet, ViewHistories), ReconError> {
    cfg.validate()?;
    let dims: Vec<_> = subjects.iter().map(|(s, _)| s.dims()).collect();
    let refs = sample_training_slices(&dims, cfg.slice_fraction, cfg.seed)?;
    let trained = ViewAxis::ALL
        .par_iter()
        .map(|&view| {
            let pairs = training_pairs(subjects, &refs, view)?;
            train_pix2pix(&pairs, view, cfg)
        })
        .collect::<Result<Vec<_>, ReconError>>()?;
    let mut models = Vec::new();
    let mut histories = Vec::new();
    for (m, h) in trained {
        histories.push((m.view, h));
        models.push(m);
    }
    Ok((Pix2PixSet::new(models), histories))
}

/// Mean absolute error of `recon` over the pairs of `view`.
pub fn mean_l1(recon: &dyn Reconstructor, view: ViewAxis, pairs: &[(OneHotSlice, Slice2D)]) -> Result<f64, ReconError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in pairs {
        let out = recon.reconstruct(view, x)?;
        total += out.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs() as f64).sum::<f64>();
        count += y.data.len();
    }
    if count == 0 {
        return Err(ReconError::Empty("no pairs to evaluate".into()));
    }
    Ok(total / count as f64)
}

use super::{Layer, Mode, NnError, Param, Real, Tensor};

/// Per-channel batch normalization over `[N, C, ...]` activations.
///
/// Train mode normalizes with the batch statistics and folds them into the
/// running estimates (`running = momentum * running + (1 - momentum) * batch`,
/// unbiased variance); eval mode uses the running estimates only. While
/// averaging is on, the estimates are the plain mean over train-mode batches.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Real> {
    channels: usize,
    momentum: f64,
    eps: f64,
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    /// Batches folded in so far while averaging.
    averaged: Option<u64>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    mode: Mode,
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, 0.9, 1e-5)
    }

    pub fn with_params(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            channels,
            momentum,
            eps,
            gamma: Param::new("gamma", Tensor::filled(&[channels], T::one())),
            beta: Param::new("beta", Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            averaged: None,
            cache: None,
        }
    }

    pub fn gamma_mut(&mut self) -> &mut Tensor<T> {
        &mut self.gamma.value
    }

    pub fn beta_mut(&mut self) -> &mut Tensor<T> {
        &mut self.beta.value
    }

    pub fn running_mean(&self) -> &Tensor<T> {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor<T> {
        &self.running_var
    }

    fn layout(&self, shape: &[usize]) -> Result<(usize, usize), NnError> {
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(NnError::Shape(format!(
                "batch norm over {} channels got input shape {shape:?}",
                self.channels
            )));
        }
        Ok((shape[0], shape[2..].iter().product()))
    }

    /// Normalizes with the given statistics; returns `(y, xhat)`.
    fn apply(&self, x: &Tensor<T>, mean: &[f64], inv_std: &[f64]) -> (Tensor<T>, Vec<T>) {
        let (_, s) = self.layout(x.shape()).expect("validated");
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        let planes = x.data().chunks_exact(s).zip(y.chunks_exact_mut(s).zip(xhat.chunks_exact_mut(s)));
        for (k, (src, (dst, hat))) in planes.enumerate() {
            let c = k % self.channels;
            let (m, is) = (T::from_f64(mean[c]), T::from_f64(inv_std[c]));
            let (gc, bc) = (g[c], b[c]);
            for ((&v, o), h) in src.iter().zip(dst.iter_mut()).zip(hat.iter_mut()) {
                *h = (v - m) * is;
                *o = gc * *h + bc;
            }
        }
        (Tensor::from_vec(x.shape(), y).expect("same shape"), xhat)
    }

    /// Per-channel mean and biased variance, accumulated in f64.
    fn batch_stats(&self, x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let (n, s) = self.layout(x.shape()).expect("validated");
        let count = (n * s) as f64;
        let mut mean = vec![0.0; self.channels];
        let mut var = vec![0.0; self.channels];
        for (k, plane) in x.data().chunks_exact(s).enumerate() {
            mean[k % self.channels] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for (k, plane) in x.data().chunks_exact(s).enumerate() {
            let m = mean[k % self.channels];
            var[k % self.channels] += plane.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count);
        (mean, var)
    }

    fn running_inv_std(&self) -> Vec<f64> {
        self.running_var.data().iter().map(|v| 1.0 / (v.as_f64() + self.eps).sqrt()).collect()
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn kind(&self) -> String {
        "batch_norm".into()
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (n, s) = self.layout(x.shape())?;
        let (y, xhat, inv_std) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::BatchTooSmall(n));
                }
                let (mean, var) = self.batch_stats(x);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let (y, xhat) = self.apply(x, &mean, &inv_std);
                let count = (n * s) as f64;
                let m = match &mut self.averaged {
                    Some(k) => {
                        *k += 1;
                        1.0 - 1.0 / *k as f64
                    }
                    None => self.momentum,
                };
                for c in 0..self.channels {
                    let unbiased = var[c] * count / (count - 1.0);
                    let rm = &mut self.running_mean.data_mut()[c];
                    *rm = T::from_f64(m * rm.as_f64() + (1.0 - m) * mean[c]);
                    let rv = &mut self.running_var.data_mut()[c];
                    *rv = T::from_f64(m * rv.as_f64() + (1.0 - m) * unbiased);
                }
                (y, xhat, inv_std)
            }
            Mode::Eval => {
                let mean: Vec<f64> = self.running_mean.data().iter().map(|v| v.as_f64()).collect();
                let inv_std = self.running_inv_std();
                let (y, xhat) = self.apply(x, &mean, &inv_std);
                (y, xhat, inv_std)
            }
        };
        self.cache = Some(Cache { mode, xhat, inv_std, shape: x.shape().to_vec() });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("batch_norm"))?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(NnError::Shape(format!("batch norm gradient {:?} vs input {:?}", grad.shape(), cache.shape)));
        }
        let (n, s) = self.layout(&cache.shape)?;
        let count = (n * s) as f64;
        let mut sum_dy = vec![0.0; self.channels];
        let mut sum_dy_xhat = vec![0.0; self.channels];
        for (k, (dy, hat)) in grad.data().chunks_exact(s).zip(cache.xhat.chunks_exact(s)).enumerate() {
            let c = k % self.channels;
            for (&g, &h) in dy.iter().zip(hat) {
                let g = g.as_f64();
                sum_dy[c] += g;
                sum_dy_xhat[c] += g * h.as_f64();
            }
        }
        for c in 0..self.channels {
            self.gamma.grad.data_mut()[c] += T::from_f64(sum_dy_xhat[c]);
            self.beta.grad.data_mut()[c] += T::from_f64(sum_dy[c]);
        }
        let mut dx = vec![T::zero(); grad.len()];
        let planes = grad.data().chunks_exact(s).zip(cache.xhat.chunks_exact(s)).zip(dx.chunks_exact_mut(s));
        for (k, ((dy, hat), out)) in planes.enumerate() {
            let c = k % self.channels;
            let scale = self.gamma.value.data()[c].as_f64() * cache.inv_std[c];
            match cache.mode {
                Mode::Eval => {
                    let kk = T::from_f64(scale);
                    for (o, &g) in out.iter_mut().zip(dy) {
                        *o = kk * g;
                    }
                }
                Mode::Train => {
                    let (a, b) = (sum_dy[c] / count, sum_dy_xhat[c] / count);
                    for ((o, &g), &h) in out.iter_mut().zip(dy).zip(hat) {
                        *o = T::from_f64(scale * (g.as_f64() - a - h.as_f64() * b));
                    }
                }
            }
        }
        Tensor::from_vec(&cache.shape, dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.layout(x.shape())?;
        let mean: Vec<f64> = self.running_mean.data().iter().map(|v| v.as_f64()).collect();
        Ok(self.apply(x, &mean, &self.running_inv_std()).0)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("running_mean", &self.running_mean), ("running_var", &self.running_var)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("running_mean", &mut self.running_mean), ("running_var", &mut self.running_var)]
    }

    fn average_running_stats(&mut self, on: bool) {
        self.averaged = on.then_some(0);
    }
}

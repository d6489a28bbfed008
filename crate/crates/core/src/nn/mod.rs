//! A small differentiable-operator kernel.
//!
//! Every operator is a [`Layer`] with an explicit forward and backward pass;
//! there is no tape. Networks are [`Sequential`] stacks or a [`UNet`], and
//! anything else (the conditional discriminator input, the GAN objective) is
//! wired by hand in the caller.
//!
//! Operators are generic over [`Real`], so training runs in `f32` while the
//! gradient checks run the same code in `f64`.

mod activation;
mod adam;
mod checkpoint;
mod conv;
mod dense;
mod gradcheck;
mod loss;
mod norm;
mod tensor;
mod unet;

pub use activation::{Activation, ActivationKind, Affine};
pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_weights, read_weights, save_weights, write_weights, WeightsHeader};
pub use conv::{conv_output_extent, Conv, ConvTranspose};
pub use dense::{Dense, GlobalAvgPool};
pub use gradcheck::{check_function_gradient, finite_difference_check, GradCheckOptions, GradCheckReport};
pub use loss::{compute_loss, LossKind};
pub use norm::BatchNorm;
pub use tensor::Tensor;
pub use unet::UNet;

use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("backward called before forward on {0}")]
    NoForwardCache(&'static str),
    #[error("non-finite values produced by {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Floating-point element type of the kernel.
pub trait Real: Float + Sum + AddAssign + Default + Debug + Display + Send + Sync + 'static {
    /// `c = a * b + beta * c` on row-major buffers. `a` is `m x k` (stored
    /// `k x m` when `a_t`), `b` is `k x n` (stored `n x k` when `b_t`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn gemm_strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // (row stride, col stride) of the logical rows x cols matrix
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer too small");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(m, k, a_t);
                let (rsb, csb) = gemm_strides(k, n, b_t);
                // SAFETY: buffer extents were checked against the logical shapes above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: &'static str,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: &'static str, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// One differentiable operator.
///
/// `forward` caches whatever `backward` needs; `backward` consumes the
/// gradient w.r.t. the output, accumulates parameter gradients and returns
/// the gradient w.r.t. the input. `infer` is a cache-free eval-mode forward.
pub trait Layer<T: Real>: Send + Sync {
    fn kind(&self) -> String;
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError>;
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError>;
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-trainable persistent tensors (running statistics).
    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    /// `true` clears running statistics and makes later train-mode batches
    /// contribute equally; `false` restores momentum updates.
    fn average_running_stats(&mut self, _on: bool) {}
}

/// A chain of layers applied in order.
pub struct Sequential<T: Real> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn push_boxed(&mut self, layer: Box<dyn Layer<T>>) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn with(mut self, layer: impl Layer<T> + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn into_layers(self) -> Vec<Box<dyn Layer<T>>> {
        self.layers
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer<T>>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn kind(&self) -> String {
        "sequential".into()
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else { return Ok(x.clone()) };
        let mut h = first.forward(x, mode)?;
        for layer in layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn average_running_stats(&mut self, on: bool) {
        for layer in &mut self.layers {
            layer.average_running_stats(on);
        }
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }
}

/// Kaiming-uniform bound `sqrt(6 / fan_in)`.
pub(crate) fn kaiming_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl rand::Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

pub(crate) fn check_finite<T: Real>(t: &Tensor<T>, what: &str) -> Result<(), NnError> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        f64::gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        f64::gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        f64::gemm(2, 2, 2, &a, false, &b, true, 1.0, &mut c);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }
}

use super::{Layer, Mode, NnError, Real, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    /// Leaky ReLU with the given negative slope (0.2 in the discriminator).
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl ActivationKind {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            ActivationKind::Relu => v.max(T::zero()),
            ActivationKind::LeakyRelu(slope) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::from_f64(slope)
                }
            }
            ActivationKind::Tanh => v.tanh(),
            ActivationKind::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the output `y`; valid because every
    /// supported kind is monotone with `y > 0` exactly when `x > 0`.
    fn derivative<T: Real>(self, y: T) -> T {
        match self {
            ActivationKind::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationKind::LeakyRelu(slope) => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::from_f64(slope)
                }
            }
            ActivationKind::Tanh => T::one() - y * y,
            ActivationKind::Sigmoid => y * (T::one() - y),
        }
    }

    fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu(_) => "leaky_relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    // split on sign to avoid exp overflow
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone)]
pub struct Activation<T> {
    kind: ActivationKind,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        if let ActivationKind::LeakyRelu(slope) = kind {
            assert!(slope >= 0.0, "leaky relu slope must be non-negative");
        }
        Activation { kind, cache: None }
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Self::new(ActivationKind::LeakyRelu(slope))
    }

    pub fn tanh() -> Self {
        Self::new(ActivationKind::Tanh)
    }

    pub fn sigmoid() -> Self {
        Self::new(ActivationKind::Sigmoid)
    }
}

impl<T: Real> Layer<T> for Activation<T> {
    fn kind(&self) -> String {
        self.kind.name().into()
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let y = self.infer(x)?;
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = self.cache.as_ref().ok_or(NnError::NoForwardCache("activation"))?;
        if grad.shape() != y.shape() {
            return Err(NnError::Shape(format!("activation gradient {:?} vs {:?}", grad.shape(), y.shape())));
        }
        let data = grad.data().iter().zip(y.data()).map(|(&g, &yi)| g * self.kind.derivative(yi)).collect();
        Tensor::from_vec(y.shape(), data)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(x.map(|v| self.kind.apply(v)))
    }
}

/// Fixed elementwise `scale * x + shift`; maps tanh output onto [0, 1].
#[derive(Debug, Clone)]
pub struct Affine {
    scale: f64,
    shift: f64,
}

impl Affine {
    pub fn new(scale: f64, shift: f64) -> Self {
        Affine { scale, shift }
    }

    /// `[-1, 1] -> [0, 1]`.
    pub fn unit_interval() -> Self {
        Self::new(0.5, 0.5)
    }
}

impl<T: Real> Layer<T> for Affine {
    fn kind(&self) -> String {
        "affine".into()
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let s = T::from_f64(self.scale);
        Ok(grad.map(|g| g * s))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (s, b) = (T::from_f64(self.scale), T::from_f64(self.shift));
        Ok(x.map(|v| v * s + b))
    }
}

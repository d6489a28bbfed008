use super::{kaiming_uniform, Layer, Mode, NnError, Param, Real, Tensor};
use rand::Rng;

/// Fully connected layer on `[N, in]` (trailing axes are flattened).
#[derive(Debug, Clone)]
pub struct Dense<T: Real> {
    inputs: usize,
    outputs: usize,
    weight: Param<T>,
    bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Dense {
            inputs,
            outputs,
            weight: Param::new("weight", kaiming_uniform(&[outputs, inputs], inputs, rng)),
            bias: Param::new("bias", Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weight.value
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias.value
    }

    fn rows(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        let n = x.batch();
        if x.len() != n * self.inputs {
            return Err(NnError::Shape(format!(
                "dense expects {} features per sample, input shape {:?}, weight shape {:?}",
                self.inputs,
                x.shape(),
                self.weight.value.shape()
            )));
        }
        Ok(n)
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.rows(x)?;
        let mut y = Tensor::zeros(&[n, self.outputs]);
        for row in y.data_mut().chunks_exact_mut(self.outputs) {
            row.copy_from_slice(self.bias.value.data());
        }
        T::gemm(n, self.inputs, self.outputs, x.data(), false, self.weight.value.data(), true, T::one(), y.data_mut());
        Ok(y)
    }
}

impl<T: Real> Layer<T> for Dense<T> {
    fn kind(&self) -> String {
        "dense".into()
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let y = self.compute(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.as_ref().ok_or(NnError::NoForwardCache("dense"))?;
        let n = x.batch();
        if grad.shape() != [n, self.outputs] {
            return Err(NnError::Shape(format!("dense gradient {:?} vs output {:?}", grad.shape(), [n, self.outputs])));
        }
        T::gemm(
            self.outputs,
            n,
            self.inputs,
            grad.data(),
            true,
            x.data(),
            false,
            T::one(),
            self.weight.grad.data_mut(),
        );
        for row in grad.data().chunks_exact(self.outputs) {
            for (b, &g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        T::gemm(
            n,
            self.outputs,
            self.inputs,
            grad.data(),
            false,
            self.weight.value.data(),
            false,
            T::zero(),
            dx.data_mut(),
        );
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.compute(x)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Mean over all spatial axes: `[N, C, ...] -> [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    fn compute<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if x.shape().len() < 3 {
            return Err(NnError::Shape(format!("global pooling needs spatial axes, got {:?}", x.shape())));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let s: usize = x.shape()[2..].iter().product();
        let data = x
            .data()
            .chunks_exact(s)
            .map(|plane| T::from_f64(plane.iter().map(|v| v.as_f64()).sum::<f64>() / s as f64))
            .collect();
        Tensor::from_vec(&[n, c], data)
    }
}

impl<T: Real> Layer<T> for GlobalAvgPool {
    fn kind(&self) -> String {
        "global_avg_pool".into()
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let y = Self::compute(x)?;
        self.input_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.input_shape.as_ref().ok_or(NnError::NoForwardCache("global_avg_pool"))?;
        if grad.shape() != &shape[..2] {
            return Err(NnError::Shape(format!("pool gradient {:?} vs output {:?}", grad.shape(), &shape[..2])));
        }
        let s: usize = shape[2..].iter().product();
        let inv = T::from_f64(1.0 / s as f64);
        let mut dx = Tensor::zeros(shape);
        for (plane, &g) in dx.data_mut().chunks_exact_mut(s).zip(grad.data()) {
            plane.fill(g * inv);
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Self::compute(x)
    }
}

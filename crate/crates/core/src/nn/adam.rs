use super::{NnError, Param, Real, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are allocated on the first step and
/// must keep matching the parameter shapes afterwards.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) -> Result<(), NnError> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NnError::Shape(format!("optimizer tracks {} tensors, got {}", self.m.len(), params.len())));
        }
        for (i, p) in params.iter().enumerate() {
            if p.value.shape() != self.m[i].shape() || p.grad.shape() != p.value.shape() {
                return Err(NnError::Shape(format!(
                    "parameter {} ({}) has shape {:?}, gradient {:?}, moments {:?}",
                    i,
                    p.name,
                    p.value.shape(),
                    p.grad.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.into_iter().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
                let g = g.as_f64();
                let mj = beta1 * m[j].as_f64() + (1.0 - beta1) * g;
                let vj = beta2 * v[j].as_f64() + (1.0 - beta2) * g * g;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                *w = T::from_f64(w.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Param<f64> {
        let mut p = Param::new("w", Tensor::from_vec(&[values.len()], values.to_vec()).unwrap());
        p.grad.data_mut().copy_from_slice(grads);
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(&[1.0, -2.0], &[0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(vec![&mut p]).unwrap();
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // closed form: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let lr = 0.01;
        let mut p = param(&[0.0, 0.0, 0.0], &[3.0, -0.5, 1e-3]);
        let mut adam = Adam::new(AdamConfig { lr, ..Default::default() });
        adam.step(vec![&mut p]).unwrap();
        for (w, g) in p.value.data().iter().zip([3.0f64, -0.5, 1e-3]) {
            let expect = -lr * g / (g.abs() + 1e-8);
            assert!((w - expect).abs() <= 0.01 * lr);
            assert!((w.abs() - lr).abs() <= 0.01 * lr);
        }
    }

    #[test]
    fn deterministic_for_equal_inputs() {
        let mut a = param(&[0.3, 0.1], &[0.2, -0.7]);
        let mut b = a.clone();
        let mut oa = Adam::new(AdamConfig::default());
        let mut ob = oa.clone();
        oa.step(vec![&mut a]).unwrap();
        ob.step(vec![&mut b]).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut a = param(&[0.3, 0.1], &[0.2, -0.7]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(vec![&mut a]).unwrap();
        let mut b = param(&[0.3], &[0.2]);
        assert!(adam.step(vec![&mut b]).is_err());
    }
}

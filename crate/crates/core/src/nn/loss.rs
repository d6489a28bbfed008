use super::{tensor::same_shape, NnError, Real, Tensor};
use serde::{Deserialize, Serialize};

/// Probabilities fed to cross-entropy are clamped to `[EPS, 1 - EPS]`.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean absolute error.
    L1,
    /// Mean binary cross-entropy on probabilities.
    Bce,
    /// Generator adversarial term: cross-entropy of the discriminator's
    /// output on generated data against "real"; `target` is ignored.
    GanGenerator,
    /// Discriminator term: cross-entropy against the real/fake label map.
    GanDiscriminator,
}

/// Mean-reduced loss and its gradient w.r.t. `pred`.
pub fn compute_loss<T: Real>(kind: LossKind, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), NnError> {
    same_shape(pred, target)?;
    let n = pred.len() as f64;
    let (loss, grad): (f64, Vec<T>) = match kind {
        LossKind::L1 => {
            let mut total = 0.0;
            let grad = pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| {
                    let d = p.as_f64() - t.as_f64();
                    total += d.abs();
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    T::from_f64(s / n)
                })
                .collect();
            (total / n, grad)
        }
        LossKind::Bce | LossKind::GanDiscriminator => bce(pred, target.data().iter().map(|t| t.as_f64())),
        LossKind::GanGenerator => bce(pred, std::iter::repeat(1.0)),
    };
    Ok((T::from_f64(loss), Tensor::from_vec(pred.shape(), grad)?))
}

fn bce<T: Real>(pred: &Tensor<T>, targets: impl Iterator<Item = f64>) -> (f64, Vec<T>) {
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(targets)
        .map(|(&p, t)| {
            let raw = p.as_f64();
            let q = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
            // the clamp is flat outside its range
            let g = if raw == q { (q - t) / (q * (1.0 - q)) } else { 0.0 };
            T::from_f64(g / n)
        })
        .collect();
    (total / n, grad)
}

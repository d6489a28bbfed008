//! Central finite-difference verification of analytic backward passes.
//!
//! A layer is reduced to the scalar `L(x) = sum(forward(x) * r)` with a fixed
//! random projection `r`, so `backward(r)` is exactly `dL/dx` and every
//! parameter gradient can be compared against `(L(p + eps) - L(p - eps)) / 2 eps`.
//!
//! Per element the error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
//! near-zero gradients from turning rounding noise into huge ratios.

use super::{Layer, Mode, NnError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Check at most this many (evenly strided) elements per tensor.
    pub max_probes: Option<usize>,
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-4, mode: Mode::Train, seed: 0, max_probes: None, floor: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Where the maximum occurred, e.g. `input[3]` or `param 2 (bias)[0]`.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64, at: impl FnOnce() -> String) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if err > self.max_rel_error || self.checked == 1 {
            self.max_rel_error = err;
            self.worst = at();
        }
    }
}

fn probes(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let step = len as f64 / m as f64;
            (0..m).map(|i| (i as f64 * step) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

fn projected(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, r: &Tensor<f64>, mode: Mode) -> Result<f64, NnError> {
    let y = layer.forward(x, mode)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Compares the analytic input and parameter gradients of `layer` at
/// `input` with central differences; returns the maximum relative error.
pub fn finite_difference_check(
    layer: &mut dyn Layer<f64>,
    input: &Tensor<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let y = layer.forward(input, opts.mode)?;
    let r = Tensor::from_vec(y.shape(), (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&r)?;
    let param_grads: Vec<Tensor<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport::new();
    let mut x = input.clone();
    for i in probes(x.len(), opts.max_probes) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + opts.eps;
        let plus = projected(layer, &x, &r, opts.mode)?;
        x.data_mut()[i] = orig - opts.eps;
        let minus = projected(layer, &x, &r, opts.mode)?;
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        report.record(dx.data()[i], numeric, opts.floor, || format!("input[{i}]"));
    }

    for (pi, analytic) in param_grads.iter().enumerate() {
        let name = layer.params()[pi].name;
        for j in probes(analytic.len(), opts.max_probes) {
            let orig = layer.params()[pi].value.data()[j];
            layer.params_mut()[pi].value.data_mut()[j] = orig + opts.eps;
            let plus = projected(layer, input, &r, opts.mode)?;
            layer.params_mut()[pi].value.data_mut()[j] = orig - opts.eps;
            let minus = projected(layer, input, &r, opts.mode)?;
            layer.params_mut()[pi].value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            report.record(analytic.data()[j], numeric, opts.floor, || format!("param {pi} ({name})[{j}]"));
        }
    }
    Ok(report)
}

/// Finite-difference check of an arbitrary scalar function against a given
/// analytic gradient (used for the losses).
pub fn check_function_gradient(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    floor: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::new();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        report.record(analytic.data()[i], (plus - minus) / (2.0 * eps), floor, || format!("x[{i}]"));
    }
    report
}

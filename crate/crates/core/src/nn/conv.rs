//! 2D and 3D convolution (cross-correlation) and transposed convolution.
//!
//! Both ranks share one implementation: a 2D input `[N, C, H, W]` is treated
//! as a 3D input with depth 1 and a kernel of depth 1. Each sample is
//! unfolded with im2col and multiplied with the weight matrix.

use super::{kaiming_uniform, Layer, Mode, NnError, Param, Real, Tensor};
use rand::Rng;

/// `floor((input + 2 * padding - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Unfolding geometry: `image` is the dense side, `grid` the positions the
/// kernel visits.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    image: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    grid: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn cols(&self) -> usize {
        self.grid.iter().product()
    }

    fn image_len(&self) -> usize {
        self.channels * self.image.iter().product::<usize>()
    }

    /// Visits every output line of the column matrix: `f(start, row_base, kx)`
    /// where `start` indexes the first of `grid[2]` column entries and
    /// `row_base` is the image offset of the source row (`None` when the row
    /// lies in the padding).
    #[inline(always)]
    fn lines(&self, mut f: impl FnMut(usize, Option<usize>, usize)) {
        let [id, ih, iw] = self.image;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, _] = self.stride;
        let [pd, ph, _] = self.pad;
        let [gd, gh, gw] = self.grid;
        let p_total = self.cols();
        let mut row = 0;
        for c in 0..self.channels {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let mut p = row * p_total;
                        for od in 0..gd {
                            let z = (od * sd + a).wrapping_sub(pd);
                            for oh in 0..gh {
                                let y = (oh * sh + b).wrapping_sub(ph);
                                let base = (z < id && y < ih).then(|| ((c * id + z) * ih + y) * iw);
                                f(p, base, e);
                                p += gw;
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Output columns `lo..hi` whose tap `kx` lands inside the image row.
    #[inline(always)]
    fn valid_span(&self, kx: usize) -> (usize, usize) {
        let (sw, pw, iw, gw) = (self.stride[2], self.pad[2], self.image[2], self.grid[2]);
        let lo = if pw > kx { (pw - kx).div_ceil(sw) } else { 0 };
        let hi = if iw + pw > kx { ((iw + pw - kx - 1) / sw + 1).min(gw) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<T: Real>(&self, img: &[T], col: &mut [T]) {
        debug_assert_eq!(img.len(), self.image_len());
        let (gw, sw, pw) = (self.grid[2], self.stride[2], self.pad[2]);
        self.lines(|start, base, kx| {
            let out = &mut col[start..start + gw];
            let Some(base) = base else {
                out.fill(T::zero());
                return;
            };
            let (lo, hi) = self.valid_span(kx);
            out[..lo].fill(T::zero());
            out[hi..].fill(T::zero());
            if lo == hi {
                return;
            }
            let first = base + lo * sw + kx - pw;
            if sw == 1 {
                out[lo..hi].copy_from_slice(&img[first..first + hi - lo]);
            } else {
                for (o, src) in out[lo..hi].iter_mut().zip(img[first..].iter().step_by(sw)) {
                    *o = *src;
                }
            }
        });
    }

    /// Scatter-adds columns back into `img`.
    fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        debug_assert_eq!(img.len(), self.image_len());
        let (sw, pw) = (self.stride[2], self.pad[2]);
        self.lines(|start, base, kx| {
            let Some(base) = base else { return };
            let (lo, hi) = self.valid_span(kx);
            if lo == hi {
                return;
            }
            let first = base + lo * sw + kx - pw;
            let src = &col[start + lo..start + hi];
            if sw == 1 {
                for (d, &v) in img[first..first + hi - lo].iter_mut().zip(src) {
                    *d += v;
                }
            } else {
                for (d, &v) in img[first..].iter_mut().step_by(sw).zip(src) {
                    *d += v;
                }
            }
        });
    }
}

/// Splits a batched activation shape into `(N, C, [D, H, W])`.
fn split_shape(shape: &[usize], rank: usize, what: &str) -> Result<(usize, usize, [usize; 3]), NnError> {
    if shape.len() != rank + 2 {
        return Err(NnError::Shape(format!("{what} expects a rank-{} batched input, got shape {shape:?}", rank + 2)));
    }
    let spatial = if rank == 2 { [1, shape[2], shape[3]] } else { [shape[2], shape[3], shape[4]] };
    Ok((shape[0], shape[1], spatial))
}

fn join_shape(n: usize, c: usize, spatial: [usize; 3], rank: usize) -> Vec<usize> {
    let mut s = vec![n, c];
    s.extend_from_slice(&spatial[3 - rank..]);
    s
}

fn kernel_shape(lead: usize, second: usize, k: usize, rank: usize) -> Vec<usize> {
    let mut s = vec![lead, second];
    s.extend(std::iter::repeat_n(k, rank));
    s
}

fn lift(rank: usize, v: usize, depth_default: usize) -> [usize; 3] {
    if rank == 2 {
        [depth_default, v, v]
    } else {
        [v, v, v]
    }
}

/// Convolution with cubic (or square) kernels.
///
/// Weight layout `[out, in, k, k(, k)]`, bias `[out]`.
#[derive(Debug, Clone)]
pub struct Conv<T: Real> {
    rank: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    weight: Param<T>,
    bias: Param<T>,
    input_grad: bool,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv<T> {
    pub fn new2d(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Self::build(2, in_ch, out_ch, k, stride, pad, rng)
    }

    pub fn new3d(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Self::build(3, in_ch, out_ch, k, stride, pad, rng)
    }

    fn build(
        rank: usize,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(k > 0 && stride > 0 && in_ch > 0 && out_ch > 0, "invalid convolution hyperparameters");
        let kernel = lift(rank, k, 1);
        let fan_in = in_ch * kernel.iter().product::<usize>();
        let weight = kaiming_uniform(&kernel_shape(out_ch, in_ch, k, rank), fan_in, rng);
        Conv {
            rank,
            in_channels: in_ch,
            out_channels: out_ch,
            kernel,
            stride: lift(rank, stride, 1),
            pad: lift(rank, pad, 0),
            weight: Param::new("weight", weight),
            bias: Param::new("bias", Tensor::zeros(&[out_ch])),
            input_grad: true,
            cache: None,
        }
    }

    /// Skip the input gradient (first layer of a network).
    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight.value
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weight.value
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias.value
    }

    fn geometry(&self, x_shape: &[usize]) -> Result<(usize, Geometry), NnError> {
        let (n, c, image) = split_shape(x_shape, self.rank, "conv")?;
        if c != self.in_channels {
            return Err(NnError::Shape(format!(
                "conv expects {} input channels, input shape {x_shape:?}, weight shape {:?}",
                self.in_channels,
                self.weight.value.shape()
            )));
        }
        let mut grid = [0; 3];
        for a in 0..3 {
            grid[a] = conv_output_extent(image[a], self.kernel[a], self.stride[a], self.pad[a]).ok_or_else(|| {
                NnError::Shape(format!(
                    "conv kernel {:?} does not fit input shape {x_shape:?} with padding {:?}",
                    self.weight.value.shape(),
                    self.pad
                ))
            })?;
        }
        let g = Geometry { channels: c, image, kernel: self.kernel, stride: self.stride, pad: self.pad, grid };
        Ok((n, g))
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, g) = self.geometry(x.shape())?;
        let (k, p) = (g.rows(), g.cols());
        let mut y = Tensor::zeros(&join_shape(n, self.out_channels, g.grid, self.rank));
        let mut col = vec![T::zero(); k * p];
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        for i in 0..n {
            g.im2col(x.sample(i), &mut col);
            let out = y.sample_mut(i);
            for (o, chunk) in out.chunks_exact_mut(p).enumerate() {
                chunk.fill(b[o]);
            }
            T::gemm(self.out_channels, k, p, w, false, &col, false, T::one(), out);
        }
        Ok(y)
    }
}

impl<T: Real> Layer<T> for Conv<T> {
    fn kind(&self) -> String {
        format!("conv{}d", self.rank)
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let y = self.compute(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.as_ref().ok_or(NnError::NoForwardCache("conv"))?;
        let (n, g) = self.geometry(x.shape())?;
        let expected = join_shape(n, self.out_channels, g.grid, self.rank);
        if grad.shape() != expected.as_slice() {
            return Err(NnError::Shape(format!("conv gradient {:?} vs output {expected:?}", grad.shape())));
        }
        let (k, p) = (g.rows(), g.cols());
        let mut dx = Tensor::zeros(x.shape());
        let mut col = vec![T::zero(); k * p];
        let mut dcol = vec![T::zero(); if self.input_grad { k * p } else { 0 }];
        for i in 0..n {
            let dy = grad.sample(i);
            g.im2col(x.sample(i), &mut col);
            T::gemm(self.out_channels, p, k, dy, false, &col, true, T::one(), self.weight.grad.data_mut());
            for (o, chunk) in dy.chunks_exact(p).enumerate() {
                self.bias.grad.data_mut()[o] += chunk.iter().copied().sum::<T>();
            }
            if self.input_grad {
                T::gemm(k, self.out_channels, p, self.weight.value.data(), true, dy, false, T::zero(), &mut dcol);
                g.col2im(&dcol, dx.sample_mut(i));
            }
        }
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

/// Transposed convolution (the adjoint of [`Conv`]), used for learned
/// upsampling. Output extent is `(in - 1) * stride - 2 * padding + k`.
///
/// Weight layout `[in, out, k, k(, k)]`, bias `[out]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose<T: Real> {
    rank: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    weight: Param<T>,
    bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose<T> {
    pub fn new2d(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Self::build(2, in_ch, out_ch, k, stride, pad, rng)
    }

    pub fn new3d(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Self::build(3, in_ch, out_ch, k, stride, pad, rng)
    }

    fn build(
        rank: usize,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(k > 0 && stride > 0 && in_ch > 0 && out_ch > 0, "invalid convolution hyperparameters");
        let kernel = lift(rank, k, 1);
        let fan_in = in_ch * kernel.iter().product::<usize>();
        let weight = kaiming_uniform(&kernel_shape(in_ch, out_ch, k, rank), fan_in, rng);
        ConvTranspose {
            rank,
            in_channels: in_ch,
            out_channels: out_ch,
            kernel,
            stride: lift(rank, stride, 1),
            pad: lift(rank, pad, 0),
            weight: Param::new("weight", weight),
            bias: Param::new("bias", Tensor::zeros(&[out_ch])),
            cache: None,
        }
    }

    fn geometry(&self, x_shape: &[usize]) -> Result<(usize, Geometry), NnError> {
        let (n, c, grid) = split_shape(x_shape, self.rank, "transposed conv")?;
        if c != self.in_channels {
            return Err(NnError::Shape(format!(
                "transposed conv expects {} input channels, input shape {x_shape:?}, weight shape {:?}",
                self.in_channels,
                self.weight.value.shape()
            )));
        }
        let mut image = [0; 3];
        for a in 0..3 {
            let full = (grid[a] - 1) * self.stride[a] + self.kernel[a];
            if full <= 2 * self.pad[a] {
                return Err(NnError::Shape(format!(
                    "transposed conv padding {:?} too large for input shape {x_shape:?}",
                    self.pad
                )));
            }
            image[a] = full - 2 * self.pad[a];
        }
        let g = Geometry {
            channels: self.out_channels,
            image,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            grid,
        };
        Ok((n, g))
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, g) = self.geometry(x.shape())?;
        let (k, p) = (g.rows(), g.cols());
        let mut y = Tensor::zeros(&join_shape(n, self.out_channels, g.image, self.rank));
        let mut col = vec![T::zero(); k * p];
        let b = self.bias.value.data();
        for i in 0..n {
            T::gemm(k, self.in_channels, p, self.weight.value.data(), true, x.sample(i), false, T::zero(), &mut col);
            let out = y.sample_mut(i);
            g.col2im(&col, out);
            let plane = out.len() / self.out_channels;
            for (o, chunk) in out.chunks_exact_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[o]);
            }
        }
        Ok(y)
    }
}

impl<T: Real> Layer<T> for ConvTranspose<T> {
    fn kind(&self) -> String {
        format!("conv_transpose{}d", self.rank)
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let y = self.compute(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.as_ref().ok_or(NnError::NoForwardCache("conv_transpose"))?;
        let (n, g) = self.geometry(x.shape())?;
        let expected = join_shape(n, self.out_channels, g.image, self.rank);
        if grad.shape() != expected.as_slice() {
            return Err(NnError::Shape(format!("transposed conv gradient {:?} vs output {expected:?}", grad.shape())));
        }
        let (k, p) = (g.rows(), g.cols());
        let mut dx = Tensor::zeros(x.shape());
        let mut dcol = vec![T::zero(); k * p];
        for i in 0..n {
            let dy = grad.sample(i);
            let plane = dy.len() / self.out_channels;
            for (o, chunk) in dy.chunks_exact(plane).enumerate() {
                self.bias.grad.data_mut()[o] += chunk.iter().copied().sum::<T>();
            }
            g.im2col(dy, &mut dcol);
            T::gemm(self.in_channels, k, p, self.weight.value.data(), false, &dcol, false, T::zero(), dx.sample_mut(i));
            T::gemm(self.in_channels, p, k, x.sample(i), false, &dcol, true, T::one(), self.weight.grad.data_mut());
        }
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation for a single 2D sample.
    fn naive_conv2d(x: &Tensor<f64>, conv: &Conv<f64>, stride: usize, pad: usize) -> Vec<f64> {
        let (cin, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let wt = conv.weight();
        let (cout, k) = (wt.shape()[0], wt.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = Vec::new();
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = conv.bias.value.data()[o];
                    for c in 0..cin {
                        for a in 0..k {
                            for b in 0..k {
                                let y = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + b) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    acc += wt.data()[((o * cin + c) * k + a) * k + b]
                                        * x.data()[(c * h + y as usize) * w + xx as usize];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(conv_output_extent(5, 3, 1, 0), Some(3));
        assert_eq!(conv_output_extent(64, 4, 2, 1), Some(32));
        assert_eq!(conv_output_extent(7, 3, 2, 1), Some(4));
        assert_eq!(conv_output_extent(2, 5, 1, 1), None);
    }

    #[test]
    fn shape_formula_over_stride_and_padding() {
        let mut r = rng();
        for stride in 1..4 {
            for pad in 0..3 {
                for size in 3..9 {
                    let conv = Conv::<f64>::new2d(2, 3, 3, stride, pad, &mut r);
                    let x = random(&[1, 2, size, size + 1], &mut r);
                    let y = conv.infer(&x).unwrap();
                    let oh = (size + 2 * pad - 3) / stride + 1;
                    let ow = (size + 1 + 2 * pad - 3) / stride + 1;
                    assert_eq!(y.shape(), &[1, 3, oh, ow]);
                }
            }
        }
        let conv = Conv::<f32>::new2d(1, 1, 3, 1, 0, &mut r);
        assert_eq!(conv.infer(&Tensor::zeros(&[1, 1, 5, 5])).unwrap().shape(), &[1, 1, 3, 3]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut r = rng();
        for rank in [2, 3] {
            let mut conv = if rank == 2 {
                Conv::<f64>::new2d(1, 1, 3, 1, 1, &mut r)
            } else {
                Conv::<f64>::new3d(1, 1, 3, 1, 1, &mut r)
            };
            let w = conv.weight_mut();
            w.fill(0.0);
            let center = w.len() / 2;
            w.data_mut()[center] = 1.0;
            let shape: Vec<usize> = if rank == 2 { vec![2, 1, 4, 5] } else { vec![2, 1, 3, 4, 5] };
            let x = random(&shape, &mut r);
            assert_eq!(conv.infer(&x).unwrap(), x);
        }
    }

    #[test]
    fn matches_naive_loops() {
        let mut r = rng();
        for (stride, pad) in [(1, 0), (2, 1), (1, 2)] {
            let mut conv = Conv::<f64>::new2d(2, 3, 3, stride, pad, &mut r);
            conv.bias_mut().data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
            let x = random(&[1, 2, 6, 7], &mut r);
            let y = conv.infer(&x).unwrap();
            let expect = naive_conv2d(&x, &conv, stride, pad);
            for (a, b) in y.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn any_geometry_matches_naive_loops(
            k in 1usize..5, stride in 1usize..4, pad in 0usize..3,
            h in 1usize..9, w in 1usize..9, seed in 0u64..1000,
        ) {
            proptest::prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let conv = Conv::<f64>::new2d(2, 2, k, stride, pad, &mut r);
            let x = random(&[1, 2, h, w], &mut r);
            let y = conv.infer(&x).unwrap();
            let expect = naive_conv2d(&x, &conv, stride, pad);
            proptest::prop_assert_eq!(y.len(), expect.len());
            for (a, b) in y.data().iter().zip(&expect) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
            // unfold and scatter are adjoint
            let (_, g) = conv.geometry(x.shape()).unwrap();
            let mut col = vec![0.0; g.rows() * g.cols()];
            g.im2col(x.data(), &mut col);
            let c = random(&[col.len()], &mut r);
            let mut back = vec![0.0; x.len()];
            g.col2im(c.data(), &mut back);
            let lhs: f64 = col.iter().zip(c.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
            proptest::prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn channel_mismatch_reports_both_shapes() {
        let conv = Conv::<f32>::new3d(2, 4, 3, 1, 1, &mut rng());
        let err = conv.infer(&Tensor::zeros(&[1, 3, 4, 4, 4])).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 4, 4, 4]") && err.contains("[4, 2, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias
        let mut r = rng();
        let conv = Conv::<f64>::new2d(2, 3, 4, 2, 1, &mut r);
        let mut tconv = ConvTranspose::<f64>::new2d(3, 2, 4, 2, 1, &mut r);
        tconv.weight.value = conv.weight().clone();
        let x = random(&[1, 2, 8, 8], &mut r);
        let cx = conv.infer(&x).unwrap();
        assert_eq!(cx.shape(), &[1, 3, 4, 4]);
        let y = random(cx.shape(), &mut r);
        let ty = tconv.infer(&y).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_doubles_resolution() {
        let t = ConvTranspose::<f32>::new3d(4, 2, 4, 2, 1, &mut rng());
        assert_eq!(t.infer(&Tensor::zeros(&[1, 4, 3, 4, 5])).unwrap().shape(), &[1, 2, 6, 8, 10]);
    }
}
